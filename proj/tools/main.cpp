// passorder: command-line front end.
//
// Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or configuration error.

#include <iostream>

#include "commands.hpp"
#include "passorder/errors.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Passing-order optimization for signal-free intersections", "passorder"};
    app.set_version_flag("--version", PASSORDER_VERSION);
    app.require_subcommand(1);
    passorder::cli::register_commands(app);
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        std::cout << PASSORDER_VERSION << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    } catch (const passorder::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const passorder::RefusalError& e) {
        std::cerr << "refused: " << e.what() << "\n";
        return 2;
    } catch (const passorder::ContractViolation& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 2;
    } catch (const passorder::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
