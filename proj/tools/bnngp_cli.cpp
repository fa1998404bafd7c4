// Command-line front end: bnngp_cli <command> [--config FILE] [--key VALUE ...]
// Settings come from the config file first; flags given on the command line win.

#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "bnngp/commands.hpp"

namespace {

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"block-NNGP spatial models: simulate, fit, predict and diagnostics"};
  app.require_subcommand(1);

  struct Sub {
    CLI::App* app = nullptr;
    std::string config_file;
    std::map<std::string, std::string> flags;
  };
  std::map<std::string, Sub> subs;
  for (const auto& name : bnngp::cli::command_names()) {
    auto& s = subs[name];
    s.app = app.add_subcommand(name, "run the " + name + " command");
    s.app->add_option("--config", s.config_file, "key=value settings file")->check(CLI::ExistingFile);
    for (const auto& key : bnngp::cli::command_keys(name))
      s.app->add_option("--" + key.name, s.flags[key.name], key.help);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    for (auto& [name, s] : subs) {
      if (!s.app->parsed()) continue;
      bnngp::io::Config cfg;
      if (!s.config_file.empty()) cfg = bnngp::io::Config::load(s.config_file);
      bnngp::io::Config over;
      for (const auto& [key, value] : s.flags)
        if (s.app->count("--" + key) > 0) over.set(key, value);
      cfg.merge(over);
      bnngp::cli::run_command(name, cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
