#pragma once

#include <mailpost/transport.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mailpost::cli
{

enum exit_code : int
{
    exit_ok = 0,
    exit_failure = 1,
    exit_config = 2,
    exit_connect = 3,
    exit_protocol = 4
};

/// Where the password or bearer token comes from, in lookup order.
enum class secret_source
{
    environment,
    config_file,
    prompt
};

/**
Settings after merging the config file and the command line.

The secret itself is only resolved when a session is opened and never stored here.
**/
struct cli_config
{
    std::string url;
    std::string username;
    /// "password" or "xoauth2".
    std::string auth = "password";
    std::optional<std::string> password_env;
    std::optional<std::string> password_file;
    std::optional<std::string> inline_password;
    std::chrono::milliseconds timeout = default_timeout;
    std::string folder = "INBOX";
    bool insecure = false;
    std::string ca_file;
};

/// Flat `key=value` lines; `#` starts a comment line. @throw error `invalid_argument` naming the line.
void apply_config_text(cli_config& config, std::string_view text);

/// `$XDG_CONFIG_HOME/mailpost/config`, falling back to `~/.config/mailpost/config`.
std::filesystem::path default_config_path(const std::function<std::optional<std::string>(const std::string&)>& getenv);

/// Hooks the front end uses for the outside world; tests replace them.
struct environment
{
    std::function<std::optional<std::string>(const std::string&)> getenv;
    /// Reads a secret without echo; nullopt when no terminal is available.
    std::function<std::optional<std::string>(const std::string& prompt)> prompt_secret;
    /// Unset means TLS to the configured URL.
    connector connect;
};

/// The process environment and a terminal prompt.
environment system_environment();

/// Parses `args` (without the program name), runs one subcommand and returns the exit code.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err,
        const environment& env);

} // namespace mailpost::cli
