#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mailpost
{

/// Every failure the library reports is one of these.
enum class errc
{
    // transport
    unsupported_scheme,
    malformed_url,
    connect_timeout,
    tls_failure,
    refused,
    connection_closed,
    read_timeout,

    // protocol
    tag_space_exhausted,
    unencodable_argument,
    unknown_verb,
    malformed_response,
    malformed_envelope,
    malformed_body_structure,
    protocol_desync,

    // session
    auth_failed,
    state_error,
    no_such_folder,
    folder_op_failed,
    invalid_timeout,
    command_failed,

    // search
    capability_missing,
    search_refused,
    invalid_range,
    invalid_argument,

    // fetch
    no_such_message,
    unknown_attribute,
    no_attachments,

    // mime
    invalid_base64,
    malformed_mime,
    io_error,

    // analytics
    bad_lexicon_line,

    // mock server
    unexpected_command,
};

std::string_view to_string(errc code) noexcept;

/**
Exception carrying a typed error code.

The message never contains credential material; callers building messages from server text must not echo
command arguments of authentication commands.
**/
class error : public std::runtime_error
{
public:
    error(errc code, const std::string& message) : std::runtime_error(message), code_(code)
    {
    }

    [[nodiscard]] errc code() const noexcept
    {
        return code_;
    }

private:
    errc code_;
};

} // namespace mailpost
