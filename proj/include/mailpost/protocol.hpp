#pragma once

#include <mailpost/transport.hpp>
#include <mailpost/types.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace mailpost
{

// ---------------------------------------------------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------------------------------------------------

/// Rendered as "A" followed by the zero-padded 4-digit counter.
struct command_tag
{
    std::uint32_t counter = 0;

    [[nodiscard]] std::string text() const;

    friend bool operator==(const command_tag&, const command_tag&) = default;
};

inline constexpr std::uint32_t max_tag_counter = 9999;

/**
Advances `counter` and returns the tag for the new value.

@throw error  `tag_space_exhausted` once the counter reached 9999; the session must reconnect.
**/
command_tag next_tag(std::uint32_t& counter);

/**
One command argument.

`atom` text goes on the wire verbatim (keywords, sequence sets, section specifiers). `astring` is sent bare when
it is a plain atom and otherwise like `quoted`. `quoted` strings become a quoted string, or a literal when they
contain 8-bit bytes or a double quote. `literal` always uses `{N}` framing. `list` is parenthesized.
**/
struct command_arg
{
    enum class kind
    {
        atom,
        astring,
        quoted,
        literal,
        list
    };

    kind type = kind::atom;
    std::string text;
    std::vector<command_arg> items;

    static command_arg atom(std::string text);
    static command_arg astring(std::string text);
    static command_arg quoted(std::string text);
    static command_arg literal(std::string bytes);
    static command_arg list(std::vector<command_arg> items);
};

/**
Serializes `<tag> <verb> <args>\r\n`.

Every chunk but the last ends with a `{N}\r\n` literal announcement; the sender must wait for a continuation
request before writing the next chunk. Joining the chunks gives the full wire form.

@throw error  `unknown_verb`, or `unencodable_argument` for CR, LF or NUL outside a literal.
**/
std::vector<std::string> serialize_command_chunks(const command_tag& tag, std::string_view verb,
                                                  const std::vector<command_arg>& args);

std::string serialize_command(const command_tag& tag, std::string_view verb, const std::vector<command_arg>& args);

/// Space-joined wire form of the arguments alone.
std::string render_args(const std::vector<command_arg>& args);

/// True for the verbs this client may send (including "UID SEARCH" style compounds).
bool is_known_verb(std::string_view verb);

// ---------------------------------------------------------------------------------------------------------------------
// Response values
// ---------------------------------------------------------------------------------------------------------------------

/// A generic parsed IMAP data item.
struct imap_value
{
    enum class kind
    {
        nil,
        atom,
        string,
        list
    };

    kind type = kind::nil;
    std::string text;
    std::vector<imap_value> items;

    [[nodiscard]] bool is_nil() const noexcept
    {
        return type == kind::nil;
    }

    [[nodiscard]] bool is_list() const noexcept
    {
        return type == kind::list;
    }

    /// Atom or string content; nullopt for NIL.
    [[nodiscard]] std::optional<std::string> as_nstring() const;

    /// Digits-only atom as a number.
    [[nodiscard]] std::optional<std::uint64_t> as_number() const;
};

/**
Parses space-separated IMAP values (atoms, NIL, quoted strings, `{N}` literals with their bytes, lists).

Atoms may carry a bracketed section such as `BODY[HEADER.FIELDS (FROM)]` with inner spaces.

@throw error  `malformed_response`.
**/
std::vector<imap_value> parse_values(std::string_view text);

// ---------------------------------------------------------------------------------------------------------------------
// Responses
// ---------------------------------------------------------------------------------------------------------------------

enum class response_kind
{
    untagged,
    tagged_ok,
    tagged_no,
    tagged_bad,
    continuation
};

/// Status or otherwise unclassified response text.
struct status_text
{
    /// OK, NO, BAD, BYE, PREAUTH, or the leading atom of an unknown untagged response.
    std::string keyword;
    /// Bracketed response code without brackets, e.g. "UIDVALIDITY 3857529045".
    std::string code;
    /// Human readable text, non-ASCII bytes replaced by U+FFFD.
    std::string text;
};

struct search_results
{
    std::vector<std::uint32_t> ids;
};

struct capability_list
{
    std::vector<std::string> tokens;
};

struct folder_entry
{
    std::vector<std::string> attributes;
    std::optional<char> delimiter;
    std::string name;
};

struct fetch_item
{
    std::uint32_t sequence = 0;
    std::vector<std::pair<std::string, imap_value>> attributes;

    /// Attribute by name, compared case-insensitively with whitespace runs collapsed.
    [[nodiscard]] const imap_value* find(std::string_view name) const;
};

/// "* <n> EXISTS", RECENT, EXPUNGE.
struct message_count
{
    std::uint32_t number = 0;
    std::string keyword;
};

struct flag_list
{
    std::vector<std::string> flags;
};

using response_payload = std::variant<status_text, search_results, capability_list, folder_entry, fetch_item,
                                      message_count, flag_list>;

struct server_response
{
    response_kind kind = response_kind::untagged;
    std::optional<std::string> tag;
    response_payload payload;
};

/**
Classifies one response, which may contain embedded literals, into a typed response.

@throw error  `malformed_response`.
**/
server_response parse_response_line(std::string_view line);

/**
Ids of a "* SEARCH ..." line, in server order.

@throw error  `malformed_response` for a missing prefix or a non-numeric token.
**/
std::vector<message_id> parse_search_results(std::string_view line, id_kind kind);

/// Reads one response line and, for every trailing `{N}` announcement, the literal bytes and the continuation line.
std::string read_response_text(connection& conn);

/**
Reads responses until the tagged completion for `tag`.

@throw error  `protocol_desync` when a different tag completes first; transport errors propagate.
**/
std::vector<server_response> read_full_response(connection& conn, const command_tag& tag);

/// Writes the chunks, waiting for a continuation request before each literal.  Returns early (false) when the
/// server answers a literal announcement with a tagged response instead; that response is stored in `rejection`.
bool send_command(connection& conn, const std::vector<std::string>& chunks, const command_tag& tag,
                  std::optional<server_response>& rejection);

// ---------------------------------------------------------------------------------------------------------------------
// ENVELOPE and BODYSTRUCTURE
// ---------------------------------------------------------------------------------------------------------------------

struct address
{
    std::optional<std::string> name;
    std::string mailbox;
    std::string host;

    /// mailbox@host
    [[nodiscard]] std::string joined() const;

    friend bool operator==(const address&, const address&) = default;
};

struct envelope
{
    std::optional<std::string> internal_date;
    std::optional<std::string> date;
    std::optional<std::string> subject;
    std::vector<address> from;
    std::vector<address> sender;
    std::vector<address> reply_to;
    std::vector<address> to;
    std::vector<address> cc;
    std::vector<address> bcc;
    std::optional<std::string> in_reply_to;
    std::optional<std::string> message_id;

    friend bool operator==(const envelope&, const envelope&) = default;
};

/**
Parses the parenthesized ENVELOPE structure. Encoded-words stay encoded.

@throw error  `malformed_envelope`.
**/
envelope parse_envelope(std::string_view payload);
envelope parse_envelope(const imap_value& value);

enum class disposition_kind
{
    attachment,
    inline_part
};

struct content_disposition
{
    disposition_kind kind = disposition_kind::attachment;
    std::map<std::string, std::string> parameters;
};

struct body_structure_node
{
    /// Dotted section path; empty for a multipart message root.
    std::string part_number;
    std::string media_type;
    std::string media_subtype;
    /// Keys lowercased.
    std::map<std::string, std::string> parameters;
    transfer_encoding encoding = transfer_encoding::seven_bit;
    std::optional<content_disposition> disposition;
    std::uint64_t size_octets = 0;
    std::vector<body_structure_node> children;

    [[nodiscard]] bool is_multipart() const noexcept
    {
        return !children.empty();
    }

    [[nodiscard]] std::string full_type() const
    {
        return media_type + "/" + media_subtype;
    }
};

/**
Parses a BODYSTRUCTURE list and assigns part numbers.

@throw error  `malformed_body_structure`.
**/
body_structure_node parse_bodystructure(std::string_view payload);
body_structure_node parse_bodystructure(const imap_value& value);

/// Depth-first pre-order walk over every node.
template <typename Visitor>
void walk(const body_structure_node& node, Visitor&& visit)
{
    visit(node);
    for (const auto& child : node.children)
        walk(child, visit);
}

/// Replaces bytes outside printable ASCII with U+FFFD, for display of server text.
std::string sanitize_display_text(std::string_view text);

} // namespace mailpost
