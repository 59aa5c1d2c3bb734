#include <mailpost/protocol.hpp>

#include <mailpost/error.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>

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

std::string lower(std::string_view text)
{
    std::string out(text);
    for (auto& c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool iequals(std::string_view a, std::string_view b)
{
    return a.size() == b.size() && upper(a) == upper(b);
}

std::string_view strip_crlf(std::string_view line)
{
    if (line.size() >= 2 && line.substr(line.size() - 2) == "\r\n")
        line.remove_suffix(2);
    return line;
}

bool is_atom_char(unsigned char c)
{
    if (c <= 0x1f || c >= 0x7f)
        return false;
    switch (c)
    {
        case '(': case ')': case '{': case ' ': case '%': case '*': case '"': case '\\': case ']':
            return false;
        default:
            return true;
    }
}

bool is_astring_char(unsigned char c)
{
    return is_atom_char(c) || c == ']';
}

bool has_forbidden_control(std::string_view text)
{
    return text.find_first_of(std::string_view("\r\n\0", 3)) != std::string_view::npos;
}

bool needs_literal(std::string_view text)
{
    return std::any_of(text.begin(), text.end(), [](char c) {
        return static_cast<unsigned char>(c) >= 0x80 || c == '"';
    });
}

// Appends the wire form of `arg`; each literal closes the current chunk.
void render(const command_arg& arg, std::vector<std::string>& chunks)
{
    auto emit_literal = [&](const std::string& bytes) {
        if (bytes.find('\0') != std::string::npos)
            throw error(errc::unencodable_argument, "literal contains a NUL byte");
        chunks.back() += "{" + std::to_string(bytes.size()) + "}\r\n";
        chunks.push_back(bytes);
    };
    auto emit_quoted = [&](const std::string& text) {
        if (has_forbidden_control(text))
            throw error(errc::unencodable_argument, "argument contains CR, LF or NUL");
        if (needs_literal(text))
        {
            emit_literal(text);
            return;
        }
        chunks.back() += '"';
        for (char c : text)
        {
            if (c == '\\')
                chunks.back() += '\\';
            chunks.back() += c;
        }
        chunks.back() += '"';
    };

    switch (arg.type)
    {
        case command_arg::kind::atom:
            if (has_forbidden_control(arg.text))
                throw error(errc::unencodable_argument, "atom contains CR, LF or NUL");
            chunks.back() += arg.text;
            break;
        case command_arg::kind::astring:
            if (!arg.text.empty() &&
                std::all_of(arg.text.begin(), arg.text.end(), [](char c) { return is_astring_char(static_cast<unsigned char>(c)); }))
                chunks.back() += arg.text;
            else
                emit_quoted(arg.text);
            break;
        case command_arg::kind::quoted:
            emit_quoted(arg.text);
            break;
        case command_arg::kind::literal:
            emit_literal(arg.text);
            break;
        case command_arg::kind::list:
            chunks.back() += '(';
            for (std::size_t i = 0; i < arg.items.size(); ++i)
            {
                if (i > 0)
                    chunks.back() += ' ';
                render(arg.items[i], chunks);
            }
            chunks.back() += ')';
            break;
    }
}

constexpr std::array known_verbs = {
    "CAPABILITY", "NOOP", "LOGOUT", "LOGIN", "AUTHENTICATE", "SELECT", "EXAMINE", "CREATE",
    "DELETE", "RENAME", "SUBSCRIBE", "UNSUBSCRIBE", "LIST", "LSUB", "STATUS", "APPEND",
    "CHECK", "CLOSE", "EXPUNGE", "SEARCH", "FETCH", "STORE", "COPY",
};

constexpr std::array uid_verbs = {"SEARCH", "FETCH", "STORE", "COPY"};

} // namespace

// Commands

std::string command_tag::text() const
{
    char buffer[16];
    std::snprintf(buffer, sizeof buffer, "A%04u", static_cast<unsigned>(counter));
    return buffer;
}

command_tag next_tag(std::uint32_t& counter)
{
    if (counter >= max_tag_counter)
        throw error(errc::tag_space_exhausted, "command tag space exhausted, reconnect the session");
    ++counter;
    return command_tag{counter};
}

command_arg command_arg::atom(std::string text)
{
    return {kind::atom, std::move(text), {}};
}

command_arg command_arg::astring(std::string text)
{
    return {kind::astring, std::move(text), {}};
}

command_arg command_arg::quoted(std::string text)
{
    return {kind::quoted, std::move(text), {}};
}

command_arg command_arg::literal(std::string bytes)
{
    return {kind::literal, std::move(bytes), {}};
}

command_arg command_arg::list(std::vector<command_arg> items)
{
    return {kind::list, {}, std::move(items)};
}

bool is_known_verb(std::string_view verb)
{
    auto v = upper(verb);
    if (v.rfind("UID ", 0) == 0)
    {
        auto sub = std::string_view(v).substr(4);
        return std::find(uid_verbs.begin(), uid_verbs.end(), sub) != uid_verbs.end();
    }
    return std::find(known_verbs.begin(), known_verbs.end(), v) != known_verbs.end();
}

std::vector<std::string> serialize_command_chunks(const command_tag& tag, std::string_view verb,
                                                  const std::vector<command_arg>& args)
{
    if (!is_known_verb(verb))
        throw error(errc::unknown_verb, "unknown IMAP verb '" + sanitize_display_text(verb) + "'");
    std::vector<std::string> chunks{tag.text() + " " + upper(verb)};
    for (const auto& arg : args)
    {
        chunks.back() += ' ';
        render(arg, chunks);
    }
    chunks.back() += "\r\n";
    return chunks;
}

std::string serialize_command(const command_tag& tag, std::string_view verb, const std::vector<command_arg>& args)
{
    std::string wire;
    for (const auto& chunk : serialize_command_chunks(tag, verb, args))
        wire += chunk;
    return wire;
}

std::string render_args(const std::vector<command_arg>& args)
{
    std::vector<std::string> chunks{""};
    for (std::size_t i = 0; i < args.size(); ++i)
    {
        if (i > 0)
            chunks.back() += ' ';
        render(args[i], chunks);
    }
    std::string out;
    for (const auto& chunk : chunks)
        out += chunk;
    return out;
}

// Values

std::optional<std::string> imap_value::as_nstring() const
{
    if (type == kind::atom || type == kind::string)
        return text;
    return std::nullopt;
}

std::optional<std::uint64_t> imap_value::as_number() const
{
    if (type != kind::atom || text.empty() || !std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '9'; }))
        return std::nullopt;
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc())
        return std::nullopt;
    return value;
}

namespace
{

class value_reader
{
public:
    explicit value_reader(std::string_view text) : text_(text)
    {
    }

    std::vector<imap_value> read_all()
    {
        std::vector<imap_value> values;
        skip_spaces();
        while (pos_ < text_.size())
        {
            values.push_back(read_value());
            skip_spaces();
        }
        return values;
    }

private:
    [[noreturn]] void fail(const char* what) const
    {
        throw error(errc::malformed_response, std::string(what) + " at offset " + std::to_string(pos_));
    }

    void skip_spaces()
    {
        while (pos_ < text_.size() && text_[pos_] == ' ')
            ++pos_;
    }

    imap_value read_value()
    {
        char c = text_[pos_];
        if (c == '(')
            return read_list();
        if (c == '"')
            return read_quoted();
        if (c == '{')
            return read_literal();
        if (c == ')')
            fail("unbalanced ')'");
        return read_atom();
    }

    imap_value read_list()
    {
        imap_value list{imap_value::kind::list, {}, {}};
        ++pos_;
        for (;;)
        {
            skip_spaces();
            if (pos_ >= text_.size())
                fail("unterminated list");
            if (text_[pos_] == ')')
            {
                ++pos_;
                return list;
            }
            list.items.push_back(read_value());
        }
    }

    imap_value read_quoted()
    {
        imap_value value{imap_value::kind::string, {}, {}};
        ++pos_;
        while (pos_ < text_.size())
        {
            char c = text_[pos_++];
            if (c == '"')
                return value;
            if (c == '\\')
            {
                if (pos_ >= text_.size())
                    break;
                c = text_[pos_++];
            }
            else if (c == '\r' || c == '\n')
                fail("line break inside quoted string");
            value.text += c;
        }
        fail("unterminated quoted string");
    }

    imap_value read_literal()
    {
        auto close = text_.find('}', pos_);
        if (close == std::string_view::npos)
            fail("unterminated literal length");
        auto digits = text_.substr(pos_ + 1, close - pos_ - 1);
        if (!digits.empty() && digits.back() == '+')
            digits.remove_suffix(1);
        std::size_t length = 0;
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), length);
        if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size())
            fail("bad literal length");
        pos_ = close + 1;
        if (text_.substr(pos_, 2) != "\r\n")
            fail("literal announcement not followed by CRLF");
        pos_ += 2;
        if (text_.size() - pos_ < length)
            fail("literal shorter than announced");
        imap_value value{imap_value::kind::string, std::string(text_.substr(pos_, length)), {}};
        pos_ += length;
        return value;
    }

    imap_value read_atom()
    {
        std::size_t start = pos_;
        while (pos_ < text_.size())
        {
            char c = text_[pos_];
            if (c == '[')
            {
                auto close = text_.find(']', pos_);
                if (close == std::string_view::npos)
                    fail("unterminated section");
                pos_ = close + 1;
                continue;
            }
            if (c == ' ' || c == '(' || c == ')' || c == '\r' || c == '\n' || c == '"' || c == '{')
                break;
            ++pos_;
        }
        if (pos_ == start)
            fail("unexpected character");
        auto token = text_.substr(start, pos_ - start);
        if (iequals(token, "NIL"))
            return {imap_value::kind::nil, {}, {}};
        return {imap_value::kind::atom, std::string(token), {}};
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

std::string normalize_attribute(std::string_view name)
{
    std::string out;
    bool space = false;
    for (char c : name)
    {
        if (c == ' ')
        {
            space = true;
            continue;
        }
        if (space && !out.empty() && out.back() != '(' && c != ')')
            out += ' ';
        space = false;
        out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return out;
}

status_text parse_status_text(std::string_view keyword, std::string_view rest)
{
    status_text status{upper(keyword), {}, {}};
    if (!rest.empty() && rest.front() == '[')
    {
        auto close = rest.find(']');
        if (close != std::string_view::npos)
        {
            status.code = std::string(rest.substr(1, close - 1));
            rest.remove_prefix(close + 1);
            if (!rest.empty() && rest.front() == ' ')
                rest.remove_prefix(1);
        }
    }
    status.text = sanitize_display_text(rest);
    return status;
}

std::pair<std::string_view, std::string_view> split_token(std::string_view text)
{
    auto space = text.find(' ');
    if (space == std::string_view::npos)
        return {text, {}};
    return {text.substr(0, space), text.substr(space + 1)};
}

fetch_item parse_fetch(std::uint32_t sequence, std::string_view rest)
{
    auto values = parse_values(rest);
    if (values.size() != 1 || !values.front().is_list() || values.front().items.size() % 2 != 0)
        throw error(errc::malformed_response, "FETCH data is not a list of attribute pairs");
    fetch_item item{sequence, {}};
    auto& items = values.front().items;
    for (std::size_t i = 0; i < items.size(); i += 2)
    {
        if (items[i].type != imap_value::kind::atom)
            throw error(errc::malformed_response, "FETCH attribute name is not an atom");
        item.attributes.emplace_back(items[i].text, std::move(items[i + 1]));
    }
    return item;
}

folder_entry parse_list_entry(std::string_view rest)
{
    auto values = parse_values(rest);
    if (values.size() != 3 || !values[0].is_list())
        throw error(errc::malformed_response, "LIST response needs attributes, delimiter and name");
    folder_entry entry;
    for (const auto& flag : values[0].items)
        entry.attributes.push_back(flag.text);
    if (auto delimiter = values[1].as_nstring(); delimiter && !delimiter->empty())
        entry.delimiter = delimiter->front();
    auto name = values[2].as_nstring();
    if (!name)
        throw error(errc::malformed_response, "LIST response has a NIL mailbox name");
    entry.name = *name;
    return entry;
}

bool is_tag_text(std::string_view tag)
{
    return !tag.empty() && std::all_of(tag.begin(), tag.end(), [](char c) {
        return is_astring_char(static_cast<unsigned char>(c)) && c != '+';
    });
}

} // namespace

std::vector<imap_value> parse_values(std::string_view text)
{
    return value_reader(text).read_all();
}

const imap_value* fetch_item::find(std::string_view name) const
{
    auto wanted = normalize_attribute(name);
    for (const auto& [key, value] : attributes)
        if (normalize_attribute(key) == wanted)
            return &value;
    return nullptr;
}

// Responses

server_response parse_response_line(std::string_view line)
{
    line = strip_crlf(line);
    if (line.empty())
        throw error(errc::malformed_response, "empty response line");

    if (line.front() == '+')
    {
        auto rest = line.substr(1);
        if (!rest.empty() && rest.front() == ' ')
            rest.remove_prefix(1);
        return {response_kind::continuation, std::nullopt, parse_status_text("+", rest)};
    }

    auto [first, after_first] = split_token(line);
    if (first == "*")
    {
        auto [keyword, rest] = split_token(after_first);
        if (keyword.empty())
            throw error(errc::malformed_response, "untagged response without data");

        std::uint32_t number = 0;
        auto [ptr, ec] = std::from_chars(keyword.data(), keyword.data() + keyword.size(), number);
        if (ec == std::errc() && ptr == keyword.data() + keyword.size())
        {
            auto [kind, data] = split_token(rest);
            auto kind_upper = upper(kind);
            if (kind_upper == "FETCH")
                return {response_kind::untagged, std::nullopt, parse_fetch(number, data)};
            if (kind_upper == "EXISTS" || kind_upper == "RECENT" || kind_upper == "EXPUNGE")
                return {response_kind::untagged, std::nullopt, message_count{number, kind_upper}};
            return {response_kind::untagged, std::nullopt, parse_status_text(kind, data)};
        }

        auto keyword_upper = upper(keyword);
        if (keyword_upper == "OK" || keyword_upper == "NO" || keyword_upper == "BAD" || keyword_upper == "BYE" ||
            keyword_upper == "PREAUTH")
            return {response_kind::untagged, std::nullopt, parse_status_text(keyword, rest)};
        if (keyword_upper == "CAPABILITY")
        {
            capability_list caps;
            std::string_view remaining = rest;
            while (!remaining.empty())
            {
                auto [token, next] = split_token(remaining);
                if (!token.empty())
                    caps.tokens.push_back(upper(token));
                remaining = next;
            }
            return {response_kind::untagged, std::nullopt, caps};
        }
        if (keyword_upper == "SEARCH")
        {
            search_results results;
            for (const auto& id : parse_search_results(line, id_kind::uid))
                results.ids.push_back(id.value);
            return {response_kind::untagged, std::nullopt, results};
        }
        if (keyword_upper == "LIST" || keyword_upper == "LSUB")
            return {response_kind::untagged, std::nullopt, parse_list_entry(rest)};
        if (keyword_upper == "FLAGS")
        {
            auto values = parse_values(rest);
            if (values.size() != 1 || !values.front().is_list())
                throw error(errc::malformed_response, "FLAGS response is not a list");
            flag_list flags;
            for (const auto& flag : values.front().items)
                flags.flags.push_back(flag.text);
            return {response_kind::untagged, std::nullopt, flags};
        }
        return {response_kind::untagged, std::nullopt, parse_status_text(keyword, rest)};
    }

    if (!is_tag_text(first))
        throw error(errc::malformed_response, "unclassifiable response line");
    auto [status, rest] = split_token(after_first);
    auto status_upper = upper(status);
    response_kind kind;
    if (status_upper == "OK")
        kind = response_kind::tagged_ok;
    else if (status_upper == "NO")
        kind = response_kind::tagged_no;
    else if (status_upper == "BAD")
        kind = response_kind::tagged_bad;
    else
        throw error(errc::malformed_response, "tagged response without OK, NO or BAD status");
    return {kind, std::string(first), parse_status_text(status, rest)};
}

std::vector<message_id> parse_search_results(std::string_view line, id_kind kind)
{
    line = strip_crlf(line);
    if (line.size() < 8 || !iequals(line.substr(0, 8), "* SEARCH") || (line.size() > 8 && line[8] != ' '))
        throw error(errc::malformed_response, "not a SEARCH response");
    std::vector<message_id> ids;
    std::string_view rest = line.substr(8);
    while (!rest.empty())
    {
        auto [token, next] = split_token(rest);
        rest = next;
        if (token.empty())
            continue;
        std::uint32_t value = 0;
        auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
        if (ec != std::errc() || ptr != token.data() + token.size() || value == 0)
            throw error(errc::malformed_response, "non-numeric id in SEARCH response");
        ids.push_back({value, kind});
    }
    return ids;
}

std::string read_response_text(connection& conn)
{
    std::string text = conn.read_line();
    for (;;)
    {
        std::string_view view = text;
        if (view.size() < 5 || view.substr(view.size() - 3) != "}\r\n")
            return text;
        auto open = view.rfind('{');
        if (open == std::string_view::npos)
            return text;
        auto digits = view.substr(open + 1, view.size() - 3 - open - 1);
        if (!digits.empty() && digits.back() == '+')
            digits.remove_suffix(1);
        std::size_t length = 0;
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), length);
        if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size())
            return text;
        text += conn.read_exact(length);
        text += conn.read_line();
    }
}

std::vector<server_response> read_full_response(connection& conn, const command_tag& tag)
{
    std::vector<server_response> responses;
    auto expected = tag.text();
    for (;;)
    {
        auto response = parse_response_line(read_response_text(conn));
        bool tagged = response.tag.has_value();
        bool matches = tagged && *response.tag == expected;
        if (tagged && !matches)
            throw error(errc::protocol_desync, "expected completion of " + expected + " but " + *response.tag + " completed");
        responses.push_back(std::move(response));
        if (matches)
            return responses;
    }
}

bool send_command(connection& conn, const std::vector<std::string>& chunks, const command_tag& tag,
                  std::optional<server_response>& rejection)
{
    auto expected = tag.text();
    for (std::size_t i = 0; i < chunks.size(); ++i)
    {
        conn.write_all(chunks[i]);
        if (i + 1 == chunks.size())
            break;
        for (;;)
        {
            auto response = parse_response_line(read_response_text(conn));
            if (response.kind == response_kind::continuation)
                break;
            if (response.tag)
            {
                if (*response.tag != expected)
                    throw error(errc::protocol_desync, "unexpected completion of " + *response.tag);
                rejection = std::move(response);
                return false;
            }
        }
    }
    return true;
}

// ENVELOPE

std::string address::joined() const
{
    return mailbox + "@" + host;
}

namespace
{

std::optional<std::string> envelope_nstring(const imap_value& value)
{
    if (value.is_list())
        throw error(errc::malformed_envelope, "expected a string, got a list");
    return value.as_nstring();
}

std::vector<address> parse_address_list(const imap_value& value)
{
    std::vector<address> out;
    if (value.is_nil())
        return out;
    if (!value.is_list())
        throw error(errc::malformed_envelope, "address list is neither NIL nor a list");
    int group_depth = 0;
    for (const auto& entry : value.items)
    {
        if (!entry.is_list() || entry.items.size() != 4)
            throw error(errc::malformed_envelope, "address is not a 4-element list");
        auto name = envelope_nstring(entry.items[0]);
        envelope_nstring(entry.items[1]);
        auto mailbox = envelope_nstring(entry.items[2]);
        auto host = envelope_nstring(entry.items[3]);
        if (!host)
        {
            // group start carries the group name in the mailbox slot, group end is all NIL
            if (mailbox)
                ++group_depth;
            else if (group_depth == 0)
                throw error(errc::malformed_envelope, "group end without group start");
            else
                --group_depth;
            continue;
        }
        if (!mailbox || mailbox->empty() || host->empty())
            throw error(errc::malformed_envelope, "address lacks a mailbox or host");
        out.push_back({name, *mailbox, *host});
    }
    if (group_depth != 0)
        throw error(errc::malformed_envelope, "unterminated address group");
    return out;
}

} // namespace

envelope parse_envelope(const imap_value& value)
{
    if (!value.is_list() || value.items.size() != 10)
        throw error(errc::malformed_envelope, "ENVELOPE must be a list of 10 fields");
    const auto& f = value.items;
    envelope env;
    env.date = envelope_nstring(f[0]);
    env.subject = envelope_nstring(f[1]);
    env.from = parse_address_list(f[2]);
    env.sender = parse_address_list(f[3]);
    env.reply_to = parse_address_list(f[4]);
    env.to = parse_address_list(f[5]);
    env.cc = parse_address_list(f[6]);
    env.bcc = parse_address_list(f[7]);
    env.in_reply_to = envelope_nstring(f[8]);
    env.message_id = envelope_nstring(f[9]);
    return env;
}

envelope parse_envelope(std::string_view payload)
{
    std::vector<imap_value> values;
    try
    {
        values = parse_values(strip_crlf(payload));
    }
    catch (const error& e)
    {
        throw error(errc::malformed_envelope, e.what());
    }
    if (values.size() != 1)
        throw error(errc::malformed_envelope, "ENVELOPE payload must be a single list");
    return parse_envelope(values.front());
}

// BODYSTRUCTURE

namespace
{

[[noreturn]] void bad_structure(const std::string& what)
{
    throw error(errc::malformed_body_structure, what);
}

std::string structure_string(const imap_value& value, const char* field)
{
    auto text = value.as_nstring();
    if (!text || value.is_list())
        bad_structure(std::string(field) + " must be a string");
    return *text;
}

std::map<std::string, std::string> structure_params(const imap_value& value)
{
    std::map<std::string, std::string> params;
    if (value.is_nil())
        return params;
    if (!value.is_list() || value.items.size() % 2 != 0)
        bad_structure("parameter list must hold key/value pairs");
    for (std::size_t i = 0; i < value.items.size(); i += 2)
        params[lower(structure_string(value.items[i], "parameter name"))] = structure_string(value.items[i + 1], "parameter value");
    return params;
}

std::optional<content_disposition> structure_disposition(const imap_value& value)
{
    if (value.is_nil())
        return std::nullopt;
    if (!value.is_list() || value.items.size() != 2)
        bad_structure("disposition must be (type params)");
    content_disposition disp;
    auto type = lower(structure_string(value.items[0], "disposition type"));
    disp.kind = type == "inline" ? disposition_kind::inline_part : disposition_kind::attachment;
    disp.parameters = structure_params(value.items[1]);
    return disp;
}

std::string child_number(const std::string& parent, std::size_t index)
{
    auto k = std::to_string(index + 1);
    return parent.empty() ? k : parent + "." + k;
}

body_structure_node parse_body(const imap_value& value, const std::string& part_number)
{
    if (!value.is_list() || value.items.empty())
        bad_structure("body must be a non-empty list");
    const auto& f = value.items;
    body_structure_node node;
    node.part_number = part_number;

    if (f.front().is_list())
    {
        std::size_t i = 0;
        for (; i < f.size() && f[i].is_list(); ++i)
            node.children.push_back(parse_body(f[i], child_number(part_number, i)));
        if (i >= f.size())
            bad_structure("multipart body lacks a subtype");
        node.media_type = "multipart";
        node.media_subtype = lower(structure_string(f[i], "multipart subtype"));
        for (const auto& child : node.children)
            node.size_octets += child.size_octets;
        if (i + 1 < f.size())
            node.parameters = structure_params(f[i + 1]);
        if (i + 2 < f.size())
            node.disposition = structure_disposition(f[i + 2]);
        return node;
    }

    if (f.size() < 7)
        bad_structure("single-part body needs at least 7 fields");
    node.media_type = lower(structure_string(f[0], "media type"));
    node.media_subtype = lower(structure_string(f[1], "media subtype"));
    node.parameters = structure_params(f[2]);
    node.encoding = parse_transfer_encoding(structure_string(f[5], "encoding"));
    auto size = f[6].as_number();
    if (!size)
        bad_structure("body size must be a number");
    node.size_octets = *size;

    std::size_t ext = 7;
    if (node.media_type == "text")
        ext = 8;
    else if (node.media_type == "message" && node.media_subtype == "rfc822")
    {
        if (f.size() < 10)
            bad_structure("message/rfc822 body needs envelope, body and line count");
        parse_envelope(f[7]);
        parse_body(f[8], part_number + ".1");
        ext = 10;
    }
    if (ext + 1 < f.size())
        node.disposition = structure_disposition(f[ext + 1]);
    return node;
}

} // namespace

body_structure_node parse_bodystructure(const imap_value& value)
{
    try
    {
        if (value.is_list() && !value.items.empty() && value.items.front().is_list())
            return parse_body(value, "");
        return parse_body(value, "1");
    }
    catch (const error& e)
    {
        if (e.code() == errc::malformed_body_structure)
            throw;
        throw error(errc::malformed_body_structure, e.what());
    }
}

body_structure_node parse_bodystructure(std::string_view payload)
{
    std::vector<imap_value> values;
    try
    {
        values = parse_values(strip_crlf(payload));
    }
    catch (const error& e)
    {
        throw error(errc::malformed_body_structure, e.what());
    }
    if (values.size() != 1)
        throw error(errc::malformed_body_structure, "BODYSTRUCTURE payload must be a single list");
    return parse_bodystructure(values.front());
}

std::string sanitize_display_text(std::string_view text)
{
    std::string out;
    out.reserve(text.size());
    for (char c : text)
    {
        auto u = static_cast<unsigned char>(c);
        if (u >= 0x80 || (u < 0x20 && u != '\t'))
            out += "\xEF\xBF\xBD";
        else
            out += c;
    }
    return out;
}

// types.hpp

transfer_encoding parse_transfer_encoding(std::string_view token)
{
    auto t = lower(token);
    while (!t.empty() && std::isspace(static_cast<unsigned char>(t.back())))
        t.pop_back();
    while (!t.empty() && std::isspace(static_cast<unsigned char>(t.front())))
        t.erase(0, 1);
    if (t == "7bit" || t.empty())
        return transfer_encoding::seven_bit;
    if (t == "8bit")
        return transfer_encoding::eight_bit;
    if (t == "quoted-printable")
        return transfer_encoding::quoted_printable;
    if (t == "base64")
        return transfer_encoding::base64;
    return transfer_encoding::binary;
}

std::string_view to_string(transfer_encoding encoding)
{
    switch (encoding)
    {
        case transfer_encoding::seven_bit: return "7bit";
        case transfer_encoding::eight_bit: return "8bit";
        case transfer_encoding::binary: return "binary";
        case transfer_encoding::quoted_printable: return "quoted-printable";
        case transfer_encoding::base64: return "base64";
    }
    return "7bit";
}

} // namespace mailpost
