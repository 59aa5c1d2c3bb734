#pragma once

#include <mailpost/protocol.hpp>
#include <mailpost/transport.hpp>

#include <chrono>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mailpost
{

struct password_auth
{
    std::string secret;
};

struct xoauth2_auth
{
    std::string bearer_token;
};

/// Connection parameters for one account session.
struct imap_config
{
    std::string url;
    std::string username;
    std::variant<password_auth, xoauth2_auth> auth;
    std::chrono::milliseconds timeout = default_timeout;
    bool use_uid = true;
    bool verify_tls = true;
};

/// Redacted rendering; secrets are never printed.
std::ostream& operator<<(std::ostream& out, const imap_config& config);

/// SASL XOAUTH2 initial client response, base64 encoded.
std::string xoauth2_initial_response(const std::string& username, const std::string& bearer_token);

enum class session_phase
{
    not_authenticated,
    authenticated,
    selected,
    logged_out
};

std::string_view to_string(session_phase phase);

struct session_state
{
    session_phase phase = session_phase::not_authenticated;
    std::optional<std::string> selected_folder;
    std::optional<std::uint32_t> message_count;
};

struct folder_selection
{
    std::uint32_t message_count = 0;
    std::vector<std::string> flags;
};

/// Receives every wire line with authentication arguments already masked. `outgoing` is true for client lines.
using trace_sink = std::function<void(bool outgoing, std::string_view line)>;

/**
A live IMAP session: the connection, its protocol phase, and the selected folder.

Single-owner. A session may move between threads between operations but is never shared concurrently; run
several sessions for parallel work.
**/
class session
{
public:
    /**
    Connects, consumes the greeting and authenticates.

    A PREAUTH greeting skips authentication; a BYE greeting fails the connect.

    @throw error  `auth_failed` when the server rejects the credentials; transport errors propagate.
    **/
    static session configure_imap(const imap_config& config, const connector& connect_with, trace_sink trace = {});

    /// Same, using a TLS connector honoring `config.verify_tls`.
    static session configure_imap(const imap_config& config, trace_sink trace = {});

    /// Connects and consumes the greeting without authenticating (phase NotAuthenticated unless PREAUTH).
    static session open(const imap_config& config, const connector& connect_with, trace_sink trace = {});

    /// LOGIN or AUTHENTICATE XOAUTH2 depending on the configured credentials.
    void authenticate();

    session(session&&) noexcept = default;
    session& operator=(session&&) noexcept = default;
    ~session();

    [[nodiscard]] const session_state& state() const noexcept
    {
        return state_;
    }

    [[nodiscard]] const imap_config& config() const noexcept
    {
        return config_;
    }

    [[nodiscard]] id_kind ids() const noexcept
    {
        return config_.use_uid ? id_kind::uid : id_kind::sequence_number;
    }

    /// Switches between UID and sequence-number identification for later searches and fetches.
    void set_use_uid(bool use_uid) noexcept
    {
        config_.use_uid = use_uid;
    }

    folder_selection select_folder(const std::string& name);

    std::vector<std::string> list_folders();

    void create_folder(const std::string& name);
    void rename_folder(const std::string& name, const std::string& new_name);
    void delete_folder(const std::string& name);

    /// Tokens of the CAPABILITY response, uppercased. Cached after the first call.
    std::vector<std::string> list_server_capabilities();

    [[nodiscard]] bool has_capability(const std::string& token);

    /// @throw error  `invalid_timeout` for zero or negative values.
    void reset_timeout(std::chrono::milliseconds timeout);

    /// Best effort; never throws. Transport problems are forwarded to the trace sink as warnings.
    void logout() noexcept;

    /**
    Sends one command and collects its responses up to and including the tagged completion.

    NO and BAD completions are returned, not thrown; callers map them to their own errors.
    **/
    std::vector<server_response> execute(std::string_view verb, const std::vector<command_arg>& args);

    /// Throws `state_error` unless the phase is one of `allowed`.
    void require_phase(std::initializer_list<session_phase> allowed, std::string_view operation) const;

private:
    session(imap_config config, connection conn, trace_sink trace);

    void trace_line(bool outgoing, std::string_view line) const;
    void read_greeting();
    std::vector<server_response> exchange(std::string_view verb, const std::vector<command_arg>& args, bool redact);
    server_response read_traced();

    imap_config config_;
    std::optional<connection> conn_;
    trace_sink trace_;
    std::uint32_t tag_counter_ = 0;
    session_state state_;
    std::optional<std::vector<std::string>> capabilities_;
};

/// The text of the tagged completion, for error messages.
std::string completion_text(const std::vector<server_response>& responses);

/// Kind of the final (tagged) response.
response_kind completion_kind(const std::vector<server_response>& responses);

} // namespace mailpost
