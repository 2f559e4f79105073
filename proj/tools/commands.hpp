#pragma once

#include <CLI11.hpp>

namespace passorder::cli {

/// Registers every subcommand on `app`. The callbacks run inside app.parse().
void register_commands(CLI::App& app);

}  // namespace passorder::cli
