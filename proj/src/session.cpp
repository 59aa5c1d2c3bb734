#include <mailpost/session.hpp>

#include <mailpost/error.hpp>
#include <mailpost/mime.hpp>

#include <algorithm>
#include <cctype>
#include <ostream>

namespace mailpost
{

namespace
{

std::string upper(std::string_view text)
{
    std::string out(text);
    for (auto& c : out)
        c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

std::string_view strip_crlf(std::string_view line)
{
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r'))
        line.remove_suffix(1);
    return line;
}

const status_text* status_of(const server_response& response)
{
    return std::get_if<status_text>(&response.payload);
}

void absorb_capability_code(const status_text& status, std::optional<std::vector<std::string>>& capabilities)
{
    if (upper(status.code.substr(0, 11)) != "CAPABILITY ")
        return;
    std::vector<std::string> tokens;
    std::string_view rest = std::string_view(status.code).substr(11);
    while (!rest.empty())
    {
        auto space = rest.find(' ');
        auto token = rest.substr(0, space);
        if (!token.empty())
            tokens.push_back(upper(token));
        rest = space == std::string_view::npos ? std::string_view{} : rest.substr(space + 1);
    }
    capabilities = std::move(tokens);
}

void check_timeout(std::chrono::milliseconds timeout)
{
    if (timeout.count() <= 0)
        throw error(errc::invalid_timeout, "timeout must be positive, got " + std::to_string(timeout.count()) + " ms");
}

} // namespace

std::ostream& operator<<(std::ostream& out, const imap_config& config)
{
    out << "imap_config{url=" << config.url << ", username=" << config.username << ", auth="
        << (std::holds_alternative<password_auth>(config.auth) ? "password" : "xoauth2") << " <redacted>, timeout="
        << config.timeout.count() << "ms, use_uid=" << (config.use_uid ? "true" : "false")
        << ", verify_tls=" << (config.verify_tls ? "true" : "false") << "}";
    return out;
}

std::string xoauth2_initial_response(const std::string& username, const std::string& bearer_token)
{
    return encode_base64("user=" + username + "\x01" + "auth=Bearer " + bearer_token + "\x01\x01");
}

std::string_view to_string(session_phase phase)
{
    switch (phase)
    {
        case session_phase::not_authenticated:
            return "NotAuthenticated";
        case session_phase::authenticated:
            return "Authenticated";
        case session_phase::selected:
            return "Selected";
        case session_phase::logged_out:
            return "LoggedOut";
    }
    return "Unknown";
}

std::string completion_text(const std::vector<server_response>& responses)
{
    if (responses.empty())
        return {};
    if (const auto* status = status_of(responses.back()))
        return status->code.empty() ? status->text : "[" + status->code + "] " + status->text;
    return {};
}

response_kind completion_kind(const std::vector<server_response>& responses)
{
    return responses.empty() ? response_kind::tagged_bad : responses.back().kind;
}

session::session(imap_config config, connection conn, trace_sink trace)
    : config_(std::move(config)), conn_(std::move(conn)), trace_(std::move(trace))
{
}

session::~session()
{
    if (conn_ && conn_->is_open())
        logout();
}

session session::open(const imap_config& config, const connector& connect_with, trace_sink trace)
{
    check_timeout(config.timeout);
    auto target = parse_url(config.url);
    session s(config, connect_with(target, config.timeout), std::move(trace));
    s.read_greeting();
    return s;
}

session session::configure_imap(const imap_config& config, const connector& connect_with, trace_sink trace)
{
    auto s = open(config, connect_with, std::move(trace));
    if (s.state_.phase == session_phase::not_authenticated)
        s.authenticate();
    return s;
}

session session::configure_imap(const imap_config& config, trace_sink trace)
{
    tls_options tls;
    tls.verify_peer = config.verify_tls;
    return configure_imap(config, tls_connector(tls), std::move(trace));
}

void session::trace_line(bool outgoing, std::string_view line) const
{
    if (trace_)
        trace_(outgoing, strip_crlf(line));
}

server_response session::read_traced()
{
    auto text = read_response_text(*conn_);
    trace_line(false, text);
    return parse_response_line(text);
}

void session::read_greeting()
{
    auto greeting = read_traced();
    const auto* status = status_of(greeting);
    if (greeting.kind != response_kind::untagged || !status)
        throw error(errc::malformed_response, "server greeting is not an untagged status response");
    auto keyword = upper(status->keyword);
    if (keyword == "BYE")
    {
        conn_->close();
        state_.phase = session_phase::logged_out;
        throw error(errc::refused, "server refused the connection: " + status->text);
    }
    if (keyword == "PREAUTH")
        state_.phase = session_phase::authenticated;
    else if (keyword == "OK")
        state_.phase = session_phase::not_authenticated;
    else
        throw error(errc::malformed_response, "unexpected greeting " + status->keyword);
    absorb_capability_code(*status, capabilities_);
}

std::vector<server_response> session::exchange(std::string_view verb, const std::vector<command_arg>& args,
                                               bool redact)
{
    if (!conn_ || !conn_->is_open())
        throw error(errc::connection_closed, "session has no open connection");

    auto tag = next_tag(tag_counter_);
    auto chunks = serialize_command_chunks(tag, verb, args);
    auto expected = tag.text();
    std::vector<server_response> responses;

    auto completes = [&](server_response& response) {
        if (!response.tag)
            return false;
        if (*response.tag != expected)
            throw error(errc::protocol_desync, "expected completion of " + expected + " but " + *response.tag + " completed");
        return true;
    };

    if (redact)
        trace_line(true, expected + " " + std::string(verb) + " <redacted>");
    for (std::size_t i = 0; i < chunks.size(); ++i)
    {
        if (!redact)
            trace_line(true, chunks[i]);
        conn_->write_all(chunks[i]);
        if (i + 1 == chunks.size())
            break;
        for (;;)
        {
            auto response = read_traced();
            if (response.kind == response_kind::continuation)
                break;
            bool done = completes(response);
            responses.push_back(std::move(response));
            if (done)
                return responses;
        }
    }

    bool authenticating = upper(verb) == "AUTHENTICATE";
    for (;;)
    {
        auto response = read_traced();
        if (response.kind == response_kind::continuation)
        {
            if (!authenticating)
                throw error(errc::protocol_desync, "unexpected continuation request after " + expected);
            // SASL error challenge: an empty response lets the server send its tagged failure
            trace_line(true, "");
            conn_->write_all("\r\n");
            continue;
        }
        if (response.kind == response_kind::untagged)
            if (auto* count = std::get_if<message_count>(&response.payload); count && count->keyword == "EXISTS" &&
                                                                            state_.phase == session_phase::selected)
                state_.message_count = count->number;
        bool done = completes(response);
        responses.push_back(std::move(response));
        if (done)
            return responses;
    }
}

std::vector<server_response> session::execute(std::string_view verb, const std::vector<command_arg>& args)
{
    return exchange(verb, args, false);
}

void session::require_phase(std::initializer_list<session_phase> allowed, std::string_view operation) const
{
    if (std::find(allowed.begin(), allowed.end(), state_.phase) != allowed.end())
        return;
    std::string expected;
    for (auto phase : allowed)
        expected += (expected.empty() ? "" : " or ") + std::string(to_string(phase));
    throw error(errc::state_error, std::string(operation) + " requires " + expected + ", session is " +
                                       std::string(to_string(state_.phase)));
}

void session::authenticate()
{
    require_phase({session_phase::not_authenticated}, "authenticate");
    std::vector<server_response> responses;
    if (const auto* password = std::get_if<password_auth>(&config_.auth))
        responses = exchange("LOGIN", {command_arg::astring(config_.username), command_arg::astring(password->secret)},
                             true);
    else
    {
        const auto& token = std::get<xoauth2_auth>(config_.auth).bearer_token;
        responses = exchange("AUTHENTICATE", {command_arg::atom("XOAUTH2"),
                                              command_arg::atom(xoauth2_initial_response(config_.username, token))},
                             true);
    }
    if (completion_kind(responses) != response_kind::tagged_ok)
        throw error(errc::auth_failed, "authentication rejected: " + completion_text(responses));
    state_.phase = session_phase::authenticated;
    capabilities_.reset();
    if (const auto* status = status_of(responses.back()))
        absorb_capability_code(*status, capabilities_);
}

folder_selection session::select_folder(const std::string& name)
{
    require_phase({session_phase::authenticated, session_phase::selected}, "select_folder");
    auto responses = exchange("SELECT", {command_arg::astring(name)}, false);
    auto kind = completion_kind(responses);
    if (kind != response_kind::tagged_ok)
    {
        // a failed SELECT leaves no mailbox selected
        state_.phase = session_phase::authenticated;
        state_.selected_folder.reset();
        state_.message_count.reset();
        if (kind == response_kind::tagged_no)
            throw error(errc::no_such_folder, "cannot select \"" + sanitize_display_text(name) + "\": " + completion_text(responses));
        throw error(errc::command_failed, "SELECT rejected: " + completion_text(responses));
    }
    folder_selection selection;
    for (const auto& response : responses)
    {
        if (const auto* count = std::get_if<message_count>(&response.payload); count && count->keyword == "EXISTS")
            selection.message_count = count->number;
        else if (const auto* flags = std::get_if<flag_list>(&response.payload))
            selection.flags = flags->flags;
    }
    state_.phase = session_phase::selected;
    state_.selected_folder = name;
    state_.message_count = selection.message_count;
    return selection;
}

std::vector<std::string> session::list_folders()
{
    require_phase({session_phase::authenticated, session_phase::selected}, "list_folders");
    auto responses = exchange("LIST", {command_arg::quoted(""), command_arg::quoted("*")}, false);
    if (completion_kind(responses) != response_kind::tagged_ok)
        throw error(errc::command_failed, "LIST rejected: " + completion_text(responses));
    std::vector<std::string> names;
    for (const auto& response : responses)
        if (const auto* entry = std::get_if<folder_entry>(&response.payload))
            names.push_back(entry->name);
    return names;
}

void session::create_folder(const std::string& name)
{
    require_phase({session_phase::authenticated, session_phase::selected}, "create_folder");
    auto responses = exchange("CREATE", {command_arg::astring(name)}, false);
    if (completion_kind(responses) != response_kind::tagged_ok)
        throw error(errc::folder_op_failed, "CREATE rejected: " + completion_text(responses));
}

void session::rename_folder(const std::string& name, const std::string& new_name)
{
    require_phase({session_phase::authenticated, session_phase::selected}, "rename_folder");
    auto responses = exchange("RENAME", {command_arg::astring(name), command_arg::astring(new_name)}, false);
    if (completion_kind(responses) != response_kind::tagged_ok)
        throw error(errc::folder_op_failed, "RENAME rejected: " + completion_text(responses));
    if (state_.selected_folder == name)
        state_.selected_folder = new_name;
}

void session::delete_folder(const std::string& name)
{
    require_phase({session_phase::authenticated, session_phase::selected}, "delete_folder");
    auto responses = exchange("DELETE", {command_arg::astring(name)}, false);
    if (completion_kind(responses) != response_kind::tagged_ok)
        throw error(errc::folder_op_failed, "DELETE rejected: " + completion_text(responses));
}

std::vector<std::string> session::list_server_capabilities()
{
    require_phase({session_phase::not_authenticated, session_phase::authenticated, session_phase::selected},
                  "list_server_capabilities");
    if (capabilities_)
        return *capabilities_;
    auto responses = exchange("CAPABILITY", {}, false);
    if (completion_kind(responses) != response_kind::tagged_ok)
        throw error(errc::command_failed, "CAPABILITY rejected: " + completion_text(responses));
    std::vector<std::string> tokens;
    for (const auto& response : responses)
        if (const auto* caps = std::get_if<capability_list>(&response.payload))
            tokens.insert(tokens.end(), caps->tokens.begin(), caps->tokens.end());
    capabilities_ = tokens;
    return tokens;
}

bool session::has_capability(const std::string& token)
{
    auto caps = list_server_capabilities();
    return std::find(caps.begin(), caps.end(), upper(token)) != caps.end();
}

void session::reset_timeout(std::chrono::milliseconds timeout)
{
    check_timeout(timeout);
    config_.timeout = timeout;
    if (conn_)
        conn_->set_timeout(timeout);
}

void session::logout() noexcept
{
    if (state_.phase == session_phase::logged_out && !(conn_ && conn_->is_open()))
        return;
    try
    {
        if (conn_ && conn_->is_open())
            exchange("LOGOUT", {}, false);
    }
    catch (const std::exception& e)
    {
        try
        {
            trace_line(false, std::string("warning: logout: ") + e.what());
        }
        catch (...)
        {
        }
    }
    if (conn_)
        conn_->close();
    state_.phase = session_phase::logged_out;
    state_.selected_folder.reset();
    state_.message_count.reset();
}

} // namespace mailpost
