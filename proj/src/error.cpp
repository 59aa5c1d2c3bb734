#include <mailpost/error.hpp>

namespace mailpost
{

std::string_view to_string(errc code) noexcept
{
    switch (code)
    {
        case errc::unsupported_scheme: return "unsupported scheme";
        case errc::malformed_url: return "malformed url";
        case errc::connect_timeout: return "connect timeout";
        case errc::tls_failure: return "tls failure";
        case errc::refused: return "connection refused";
        case errc::connection_closed: return "connection closed";
        case errc::read_timeout: return "read timeout";
        case errc::tag_space_exhausted: return "tag space exhausted";
        case errc::unencodable_argument: return "unencodable argument";
        case errc::unknown_verb: return "unknown verb";
        case errc::malformed_response: return "malformed response";
        case errc::malformed_envelope: return "malformed envelope";
        case errc::malformed_body_structure: return "malformed body structure";
        case errc::protocol_desync: return "protocol desync";
        case errc::auth_failed: return "authentication failed";
        case errc::state_error: return "state error";
        case errc::no_such_folder: return "no such folder";
        case errc::folder_op_failed: return "folder operation failed";
        case errc::invalid_timeout: return "invalid timeout";
        case errc::command_failed: return "command failed";
        case errc::capability_missing: return "capability missing";
        case errc::search_refused: return "search refused";
        case errc::invalid_range: return "invalid range";
        case errc::invalid_argument: return "invalid argument";
        case errc::no_such_message: return "no such message";
        case errc::unknown_attribute: return "unknown attribute";
        case errc::no_attachments: return "no attachments";
        case errc::invalid_base64: return "invalid base64";
        case errc::malformed_mime: return "malformed mime";
        case errc::io_error: return "i/o error";
        case errc::bad_lexicon_line: return "bad lexicon line";
        case errc::unexpected_command: return "unexpected command";
    }
    return "unknown error";
}

} // namespace mailpost
