#pragma once

#include <mailpost/transport.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mailpost::mock
{

// ---------------------------------------------------------------------------------------------------------------------
// Received commands
// ---------------------------------------------------------------------------------------------------------------------

/// A decoded command argument. Quoted strings and literals both become `string`.
struct token
{
    enum class kind
    {
        atom,
        string,
        list
    };

    kind type = kind::atom;
    std::string text;
    std::vector<token> items;
};

/// @throw error  `malformed_response` for unbalanced lists, bad quoting or truncated literals.
std::vector<token> tokenize(std::string_view text);

struct received_command
{
    std::string tag;
    /// Uppercased; "UID FETCH" style for UID commands.
    std::string verb;
    std::vector<token> args;
    /// The full command as received, literals inline, without the final CRLF.
    std::string line;
};

received_command parse_command(std::string_view wire);

// ---------------------------------------------------------------------------------------------------------------------
// Scripts and fixtures
// ---------------------------------------------------------------------------------------------------------------------

struct script_step
{
    /// Expected verb, case-insensitive; empty matches any.
    std::string verb;
    /// Extra argument check; unset accepts anything.
    std::function<bool(const received_command&)> predicate;
    /// Untagged lines sent before the completion; CRLF is appended. Literal framing is the author's job.
    std::vector<std::string> untagged;
    /// Sent as "+ <challenge>" before the completion; the server then waits for one client line.
    std::optional<std::string> challenge;
    std::string status = "OK";
    std::string text = "completed";
    /// Strict steps must be consumed in script order; loose ones match whenever they fit.
    bool strict_order = true;
    /// Drop the connection right after this step's responses.
    bool hang_up = false;
};

/// Convenience for the common verb-and-reply step.
script_step step(std::string verb, std::vector<std::string> untagged = {}, std::string status = "OK",
                 std::string text = "completed");

/// `{N}\r\n` followed by the bytes, for embedding into untagged lines.
std::string literal(std::string_view bytes);

struct fixture_message
{
    std::uint32_t uid = 0;
    std::string raw;
    std::vector<std::string> flags;
    /// "05-Nov-2020 10:00:00 +0000"
    std::string internal_date;
};

struct fixture_mailbox
{
    std::string folder;
    /// Ascending unique UIDs.
    std::vector<fixture_message> messages;
};

/**
Reads `manifest.json` from `dir`: `{"folders": [{"name": ..., "messages": [{"uid", "file", "flags",
"internal_date"}]}]}` with message files relative to `dir`.

@throw error  `io_error` for unreadable files, `invalid_argument` for a bad manifest or non-ascending UIDs.
**/
std::vector<fixture_mailbox> load_fixtures(const std::filesystem::path& dir);

/// "DD-Mon-YYYY HH:MM:SS +ZZZZ" to seconds since the epoch; nullopt when malformed.
std::optional<std::int64_t> parse_internal_date(std::string_view text);

// ---------------------------------------------------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------------------------------------------------

enum class greeting_kind
{
    ok,
    preauth,
    bye
};

struct server_options
{
    greeting_kind greeting = greeting_kind::ok;
    std::string greeting_text = "mailpost mock ready";
    /// Stateful mode only; the WITHIN token is appended when `within` is set.
    std::vector<std::string> capabilities = {"IMAP4rev1", "UIDPLUS", "AUTH=XOAUTH2", "SASL-IR"};
    bool within = true;
    /// Stateful credential checks; unset accepts any.
    std::optional<std::string> username;
    std::optional<std::string> password;
    std::optional<std::string> bearer_token;
    /// Emit FETCH responses of one command in a pseudo-random order.
    bool shuffle_fetch = false;
    std::uint32_t shuffle_seed = 7;
    /// Reference time for YOUNGER/OLDER; defaults to the wall clock.
    std::optional<std::int64_t> now;
};

/**
An in-process IMAP server.

Each connection is served on its own thread, one at a time. The log records every received command in arrival
order across connections.
**/
class server
{
public:
    static std::shared_ptr<server> start_scripted(std::vector<script_step> steps, server_options options = {});
    static std::shared_ptr<server> start_stateful(std::vector<fixture_mailbox> fixtures, server_options options = {});

    ~server();
    server(const server&) = delete;
    server& operator=(const server&) = delete;

    /// Connector handing out in-memory connections to this server; the endpoint is ignored.
    connector memory_connector();

    /// Starts accepting TLS on 127.0.0.1 and returns the port. `port` 0 picks a free one.
    std::uint16_t listen_tls(std::uint16_t port = 0);

    /// PEM of the self-signed certificate used for TLS (CN and SAN localhost / 127.0.0.1).
    static const std::string& certificate_pem();

    std::vector<std::string> command_log() const;
    std::vector<std::string> unexpected_commands() const;
    std::size_t remaining_steps() const;

    /// Stateful mode: current folder names.
    std::vector<std::string> folders() const;

    /// Stops listening and joins every serving thread.
    void stop();

    /// Blocks until all connections served so far have ended, or the timeout passes. Returns true when idle.
    bool wait_idle(std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));

    struct impl;

private:
    explicit server(std::unique_ptr<impl> state);

    std::unique_ptr<impl> impl_;
};

} // namespace mailpost::mock
