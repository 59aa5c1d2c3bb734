#pragma once

#include <mailpost/error.hpp>
#include <mailpost/protocol.hpp>
#include <mailpost/session.hpp>

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mailpost
{

struct body_payload
{
    std::string bytes;
};

struct header_payload
{
    std::string bytes;
};

struct text_payload
{
    std::string bytes;
};

/// Only the requested attributes are set.
struct message_metadata
{
    std::optional<envelope> env;
    std::optional<std::string> internal_date;
    std::optional<std::vector<std::string>> flags;
    std::optional<std::uint64_t> size;
    std::optional<std::uint32_t> uid;
};

/// One attachment part, still transfer-encoded.
struct part_payload
{
    std::string part_number;
    std::string bytes;
    transfer_encoding encoding = transfer_encoding::seven_bit;
    /// Sanitized display filename derived from BODYSTRUCTURE parameters.
    std::string filename;
    std::string media_type;
};

/// A per-id failure kept alongside successful results.
struct fetch_failure
{
    errc code = errc::no_such_message;
    std::string message;
};

struct fetch_result
{
    message_id id;
    std::variant<fetch_failure, body_payload, header_payload, text_payload, message_metadata, part_payload> item;

    [[nodiscard]] bool ok() const noexcept
    {
        return !std::holds_alternative<fetch_failure>(item);
    }

    /// Raw bytes of body, header, text and part items; nullptr otherwise.
    [[nodiscard]] const std::string* raw_bytes() const noexcept;
};

/**
`BODY.PEEK[]`, or `BODY.PEEK[k]` with a MIME level. One result per id in input order; ids the server does not
return come back as `no_such_message` failures.

@throw error  `state_error` unless Selected; `invalid_argument` for an empty id list, a zero MIME level or ids
              of the wrong kind.
**/
std::vector<fetch_result> fetch_body(session& s, const std::vector<message_id>& ids,
                                     std::optional<unsigned> mime_level = std::nullopt);

/// `BODY.PEEK[HEADER]` or `BODY.PEEK[HEADER.FIELDS (...)]`; an empty field list means the full header.
std::vector<fetch_result> fetch_header(session& s, const std::vector<message_id>& ids,
                                       const std::vector<std::string>& fields = {});

/// `BODY.PEEK[TEXT]`.
std::vector<fetch_result> fetch_text(session& s, const std::vector<message_id>& ids);

/// The attributes this client can request and decode.
const std::vector<std::string>& metadata_attributes();

/**
@throw error  `unknown_attribute` for anything outside ENVELOPE, INTERNALDATE, FLAGS, RFC822.SIZE and UID;
              `invalid_argument` for an empty attribute list.
**/
std::vector<fetch_result> fetch_metadata(session& s, const std::vector<message_id>& ids,
                                         const std::vector<std::string>& attributes);

/**
Reads BODYSTRUCTURE, then fetches every attachment leaf by section number.

Each id yields its part results in tree order, or a single failure: `no_attachments`, `no_such_message`, or
`malformed_body_structure` when its structure cannot be parsed.
**/
std::vector<fetch_result> fetch_attachments(session& s, const std::vector<message_id>& ids);

/// Attachment leaves of a BODYSTRUCTURE tree: attachment disposition or a filename parameter.
std::vector<const body_structure_node*> attachment_parts(const body_structure_node& root);

/// Comma-joined id list for a sequence set.
std::string sequence_set(const std::vector<message_id>& ids);

} // namespace mailpost
