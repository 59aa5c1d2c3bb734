#pragma once

#include <mailpost/protocol.hpp>
#include <mailpost/types.hpp>

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mailpost
{

// ---------------------------------------------------------------------------------------------------------------------
// Transfer encodings
// ---------------------------------------------------------------------------------------------------------------------

/**
Decodes base64, ignoring embedded whitespace and line breaks. Missing trailing padding is tolerated, as seen in
RFC 2047 encoded-words.

@throw error  `invalid_base64` for a symbol outside the alphabet, misplaced or excess padding, or a dangling
              single symbol.
**/
std::string decode_base64(std::string_view text);

/// Standard base64 with padding; `line_length` > 0 wraps with CRLF every that many characters.
std::string encode_base64(std::string_view bytes, std::size_t line_length = 0);

/// Decodes `=XY` escapes and removes soft line breaks. Invalid escapes pass through verbatim.
std::string decode_quoted_printable(std::string_view bytes);

std::string decode_transfer(std::string_view body, transfer_encoding encoding);

// ---------------------------------------------------------------------------------------------------------------------
// Charsets
// ---------------------------------------------------------------------------------------------------------------------

struct converted_text
{
    std::string utf8;
    /// Set when the charset was unknown or the bytes were not valid in it and Latin-1 was used instead.
    bool fell_back = false;
};

/// Built-in tables: UTF-8, US-ASCII, ISO-8859-1, Windows-1252. Anything else is read as Latin-1.
converted_text to_utf8(std::string_view bytes, std::string_view charset);

bool is_valid_utf8(std::string_view bytes);

/// Decodes every RFC 2047 encoded-word; malformed words stay verbatim.
std::string decode_mime_header(std::string_view text);

// ---------------------------------------------------------------------------------------------------------------------
// Entities
// ---------------------------------------------------------------------------------------------------------------------

struct header_field
{
    std::string name;
    /// Unfolded, otherwise raw.
    std::string value;
};

struct mime_disposition
{
    disposition_kind kind = disposition_kind::attachment;
    std::map<std::string, std::string> parameters;
};

struct mime_entity
{
    std::vector<header_field> headers;
    std::string media_type = "text";
    std::string media_subtype = "plain";
    /// Content-Type parameters, keys lowercased, RFC 2231 continuations joined.
    std::map<std::string, std::string> parameters;
    std::optional<std::string> charset;
    transfer_encoding encoding = transfer_encoding::seven_bit;
    std::optional<mime_disposition> disposition;
    /// Leaf content, still transfer-encoded. Empty for multiparts.
    std::string body;
    std::vector<mime_entity> children;
    /// Same numbering as IMAP sections; empty for a multipart message root.
    std::string part_number;
    /// Best-effort recovery happened somewhere at or below this entity (e.g. a missing closing boundary).
    bool malformed = false;

    [[nodiscard]] bool is_multipart() const noexcept
    {
        return media_type == "multipart" && !children.empty();
    }

    [[nodiscard]] std::string full_type() const
    {
        return media_type + "/" + media_subtype;
    }

    /// First header with that name, case-insensitive.
    [[nodiscard]] const std::string* header(std::string_view name) const;

    [[nodiscard]] std::string decoded_body() const
    {
        return decode_transfer(body, encoding);
    }
};

/// Parses a full message or a part with its MIME headers. Never throws on malformed input; sets `malformed`.
mime_entity parse_mime(std::string_view raw);

/**
Parses a TEXT section (a message body with its headers stripped).

Without the header the multipart boundary is unknown, so it is taken from the first delimiter line.
**/
mime_entity parse_text_section(std::string_view raw);

/// Re-emits a parsed tree; parsing the result yields a structurally equal tree.
std::string serialize_mime(const mime_entity& entity);

/// Parses `type/subtype; key=value; ...` including quoted values and RFC 2231 parameters.
struct parsed_content_type
{
    std::string media_type;
    std::string media_subtype;
    std::map<std::string, std::string> parameters;
};

parsed_content_type parse_content_type(std::string_view value);

/// Parameters of a structured header value after the first `;`.
std::map<std::string, std::string> parse_header_parameters(std::string_view text);

// ---------------------------------------------------------------------------------------------------------------------
// Text and attachments
// ---------------------------------------------------------------------------------------------------------------------

/**
Decodes fetched text payloads into readable UTF-8 with `\n` line endings.

Header-bearing payloads are decoded according to their headers (the first text part of a multipart). Bare parts
are sniffed for base64 or quoted-printable content. Output order matches input order.
**/
std::vector<std::string> clean_msg_text(const std::vector<std::string>& payloads);
std::string clean_msg_text(std::string_view payload);

struct attachment
{
    message_id source_id;
    std::string part_number;
    std::string filename;
    std::string media_type;
    /// Transfer-decoded bytes; empty in listings.
    std::string content;
};

/**
Picks a readable filename from Content-Disposition and Content-Type parameters (RFC 2231 and RFC 2047 aware).
Returns nullopt when neither carries one.
**/
std::optional<std::string> attachment_filename(const std::map<std::string, std::string>& disposition_params,
                                               const std::map<std::string, std::string>& type_params);

/**
Reduces a filename to a single safe path component: no separators, no leading dots, no control bytes.
Empty results become `part-<part_number>.bin`.
**/
std::string sanitize_filename(std::string_view name, std::string_view part_number);

/// Leaves with an attachment disposition or a filename, in tree order. Content is left empty.
std::vector<attachment> list_attachments(const mime_entity& entity, message_id id);

/// Same selection with decoded content.
std::vector<attachment> extract_attachments(const mime_entity& entity, message_id id);

} // namespace mailpost
