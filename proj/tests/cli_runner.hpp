#pragma once

// Runs the passorder binary in a child shell and collects files for byte comparisons.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#ifndef PASSORDER_CLI_PATH
#error "PASSORDER_CLI_PATH must point at the passorder executable"
#endif

namespace clirun {

namespace fs = std::filesystem;

struct Result {
    int code = -1;
    std::string output;  // stdout and stderr together
};

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Sandbox {
public:
    explicit Sandbox(const std::string& tag) {
        root_ = fs::temp_directory_path() / ("passorder_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(root_);
        fs::create_directories(root_);
    }
    ~Sandbox() {
        std::error_code ec;
        fs::remove_all(root_, ec);
    }
    Sandbox(const Sandbox&) = delete;
    Sandbox& operator=(const Sandbox&) = delete;

    const fs::path& root() const { return root_; }
    std::string path(const std::string& name) const { return (root_ / name).string(); }

    Result run(const std::string& args) const {
        const fs::path log = root_ / "last_run.log";
        const std::string cmd = std::string("'") + PASSORDER_CLI_PATH + "' " + args + " > '" + log.string() + "' 2>&1";
        const int status = std::system(cmd.c_str());
        Result r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.output = read_file(log);
        return r;
    }

private:
    fs::path root_;
};

/// Every regular file under dir keyed by relative path.
inline std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
    }
    return out;
}

}  // namespace clirun
