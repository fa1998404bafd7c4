#pragma once

#include "bnngp/blockgraph.hpp"
#include "bnngp/covariance.hpp"
#include "bnngp/error.hpp"
#include "bnngp/factors.hpp"
#include "bnngp/geometry.hpp"
#include "bnngp/inference.hpp"
#include "bnngp/io.hpp"
#include "bnngp/parallel.hpp"
#include "bnngp/predict.hpp"
#include "bnngp/process.hpp"
#include "bnngp/sparse_cholesky.hpp"
