#include <mailpost/mime.hpp>

#include <mailpost/error.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

namespace mailpost
{

namespace
{

std::string lower(std::string_view text)
{
    std::string out(text);
    for (auto& c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string_view trim(std::string_view text)
{
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front())))
        text.remove_prefix(1);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back())))
        text.remove_suffix(1);
    return text;
}

int hex_value(char c)
{
    if (c >= '0' && c <= '9')
        return c - '0';
    if (c >= 'A' && c <= 'F')
        return c - 'A' + 10;
    if (c >= 'a' && c <= 'f')
        return c - 'a' + 10;
    return -1;
}

constexpr std::string_view base64_alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int base64_value(char c)
{
    if (c >= 'A' && c <= 'Z')
        return c - 'A';
    if (c >= 'a' && c <= 'z')
        return c - 'a' + 26;
    if (c >= '0' && c <= '9')
        return c - '0' + 52;
    if (c == '+')
        return 62;
    if (c == '/')
        return 63;
    return -1;
}

void append_utf8(std::string& out, char32_t cp)
{
    if (cp < 0x80)
        out += static_cast<char>(cp);
    else if (cp < 0x800)
    {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
    else if (cp < 0x10000)
    {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
    else
    {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

// 0x80..0x9F; zero marks an unassigned byte
constexpr std::array<char32_t, 32> windows1252_high = {
    0x20AC, 0, 0x201A, 0x0192, 0x201E, 0x2026, 0x2020, 0x2021, 0x02C6, 0x2030, 0x0160, 0x2039, 0x0152, 0, 0x017D, 0,
    0, 0x2018, 0x2019, 0x201C, 0x201D, 0x2022, 0x2013, 0x2014, 0x02DC, 0x2122, 0x0161, 0x203A, 0x0153, 0, 0x017E, 0x0178,
};

std::string latin1_to_utf8(std::string_view bytes)
{
    std::string out;
    out.reserve(bytes.size() * 2);
    for (char c : bytes)
        append_utf8(out, static_cast<unsigned char>(c));
    return out;
}

std::string windows1252_to_utf8(std::string_view bytes)
{
    std::string out;
    out.reserve(bytes.size() * 2);
    for (char c : bytes)
    {
        auto u = static_cast<unsigned char>(c);
        if (u >= 0x80 && u <= 0x9F)
        {
            char32_t cp = windows1252_high[u - 0x80];
            append_utf8(out, cp == 0 ? char32_t{0xFFFD} : cp);
        }
        else
            append_utf8(out, u);
    }
    return out;
}

// ---- header syntax ----

bool is_header_name_char(unsigned char c)
{
    return c >= 0x21 && c <= 0x7E && c != ':';
}

bool is_header_line(std::string_view line)
{
    auto colon = line.find(':');
    if (colon == 0 || colon == std::string_view::npos)
        return false;
    return std::all_of(line.begin(), line.begin() + static_cast<std::ptrdiff_t>(colon),
                       [](char c) { return is_header_name_char(static_cast<unsigned char>(c)); });
}

/// One physical line: content without its terminator, and the offset just past the terminator.
struct line_span
{
    std::string_view content;
    std::size_t start = 0;
    std::size_t next = 0;
};

line_span line_at(std::string_view text, std::size_t pos)
{
    auto lf = text.find('\n', pos);
    std::size_t end = lf == std::string_view::npos ? text.size() : lf;
    std::size_t next = lf == std::string_view::npos ? text.size() : lf + 1;
    auto content = text.substr(pos, end - pos);
    if (!content.empty() && content.back() == '\r')
        content.remove_suffix(1);
    return {content, pos, next};
}

struct header_split
{
    std::vector<header_field> headers;
    std::size_t body_start = 0;
    bool has_headers = false;
};

header_split split_headers(std::string_view raw)
{
    header_split result;
    if (raw.empty())
        return result;
    auto first = line_at(raw, 0);
    if (first.content.empty())
    {
        result.body_start = first.next;
        return result;
    }
    if (!is_header_line(first.content))
        return result;

    result.has_headers = true;
    std::size_t pos = 0;
    while (pos < raw.size())
    {
        auto line = line_at(raw, pos);
        if (line.content.empty())
        {
            result.body_start = line.next;
            return result;
        }
        if ((line.content.front() == ' ' || line.content.front() == '\t') && !result.headers.empty())
            result.headers.back().value += std::string(line.content);
        else if (is_header_line(line.content))
        {
            auto colon = line.content.find(':');
            result.headers.push_back({std::string(line.content.substr(0, colon)),
                                      std::string(trim(line.content.substr(colon + 1)))});
        }
        else
        {
            // not a header: the header block ended without a blank separator line
            result.body_start = line.start;
            return result;
        }
        pos = line.next;
    }
    result.body_start = raw.size();
    return result;
}

std::string percent_decode(std::string_view text)
{
    std::string out;
    for (std::size_t i = 0; i < text.size(); ++i)
    {
        if (text[i] == '%' && i + 2 < text.size() && hex_value(text[i + 1]) >= 0 && hex_value(text[i + 2]) >= 0)
        {
            out += static_cast<char>(hex_value(text[i + 1]) * 16 + hex_value(text[i + 2]));
            i += 2;
        }
        else
            out += text[i];
    }
    return out;
}

// Folds RFC 2231 `key*`, `key*0`, `key*1*` style parameters into plain keys.
std::map<std::string, std::string> combine_rfc2231(const std::map<std::string, std::string>& raw)
{
    struct segment
    {
        std::string value;
        bool extended = false;
    };
    std::map<std::string, std::map<int, segment>> continued;
    std::map<std::string, std::string> out;
    std::map<std::string, std::string> extended_single;

    for (const auto& [key, value] : raw)
    {
        auto star = key.find('*');
        if (star == std::string::npos)
        {
            out[key] = value;
            continue;
        }
        auto base = key.substr(0, star);
        auto rest = std::string_view(key).substr(star + 1);
        if (rest.empty())
        {
            extended_single[base] = value;
            continue;
        }
        bool extended = rest.back() == '*';
        if (extended)
            rest.remove_suffix(1);
        if (rest.empty() || !std::all_of(rest.begin(), rest.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        {
            out[key] = value;
            continue;
        }
        continued[base][std::stoi(std::string(rest))] = {value, extended};
    }

    auto decode_extended = [](std::string_view value, bool with_charset, std::string& charset) {
        if (with_charset)
        {
            auto q1 = value.find('\'');
            auto q2 = q1 == std::string_view::npos ? q1 : value.find('\'', q1 + 1);
            if (q2 != std::string_view::npos)
            {
                charset = std::string(value.substr(0, q1));
                value = value.substr(q2 + 1);
            }
        }
        return percent_decode(value);
    };

    for (const auto& [base, segments] : continued)
    {
        std::string charset;
        std::string joined;
        bool any_extended = false;
        for (const auto& [index, seg] : segments)
        {
            if (seg.extended)
            {
                any_extended = true;
                joined += decode_extended(seg.value, index == 0, charset);
            }
            else
                joined += seg.value;
        }
        out[base] = any_extended ? to_utf8(joined, charset).utf8 : joined;
    }
    for (const auto& [base, value] : extended_single)
    {
        std::string charset;
        auto bytes = decode_extended(value, true, charset);
        out[base] = to_utf8(bytes, charset).utf8;
    }
    return out;
}

// ---- multipart splitting ----

bool is_delimiter(std::string_view line, std::string_view boundary, bool& closing)
{
    if (line.size() < boundary.size() + 2 || line.substr(0, 2) != "--" || line.substr(2, boundary.size()) != boundary)
        return false;
    auto rest = line.substr(2 + boundary.size());
    closing = rest.size() >= 2 && rest.substr(0, 2) == "--";
    if (closing)
        rest.remove_prefix(2);
    return trim(rest).empty();
}

// Strips the line break that belongs to the following delimiter.
std::string_view drop_trailing_break(std::string_view text)
{
    if (!text.empty() && text.back() == '\n')
        text.remove_suffix(1);
    if (!text.empty() && text.back() == '\r')
        text.remove_suffix(1);
    return text;
}

void apply_headers(mime_entity& entity)
{
    if (const auto* type = entity.header("Content-Type"))
    {
        auto parsed = parse_content_type(*type);
        if (!parsed.media_type.empty())
        {
            entity.media_type = parsed.media_type;
            entity.media_subtype = parsed.media_subtype;
        }
        entity.parameters = std::move(parsed.parameters);
    }
    if (auto it = entity.parameters.find("charset"); it != entity.parameters.end())
        entity.charset = it->second;
    if (const auto* cte = entity.header("Content-Transfer-Encoding"))
        entity.encoding = parse_transfer_encoding(*cte);
    if (const auto* disp = entity.header("Content-Disposition"))
    {
        auto semicolon = disp->find(';');
        auto kind = lower(trim(std::string_view(*disp).substr(0, semicolon)));
        mime_disposition d;
        d.kind = kind == "inline" ? disposition_kind::inline_part : disposition_kind::attachment;
        if (semicolon != std::string::npos)
            d.parameters = parse_header_parameters(std::string_view(*disp).substr(semicolon + 1));
        entity.disposition = std::move(d);
    }
}

mime_entity parse_entity(std::string_view raw, int depth);

void split_multipart(mime_entity& entity, std::string_view body, std::string_view boundary, int depth)
{
    std::size_t pos = 0;
    std::optional<std::size_t> part_start;
    bool closed = false;
    while (pos < body.size())
    {
        auto line = line_at(body, pos);
        bool closing = false;
        if (is_delimiter(line.content, boundary, closing))
        {
            if (part_start)
                entity.children.push_back(parse_entity(drop_trailing_break(body.substr(*part_start, line.start - *part_start)), depth + 1));
            if (closing)
            {
                closed = true;
                break;
            }
            part_start = line.next;
        }
        pos = line.next;
    }
    if (!closed)
    {
        entity.malformed = true;
        if (part_start)
            entity.children.push_back(parse_entity(body.substr(*part_start), depth + 1));
    }
    for (const auto& child : entity.children)
        entity.malformed = entity.malformed || child.malformed;
}

constexpr int max_depth = 32;

mime_entity parse_entity(std::string_view raw, int depth)
{
    mime_entity entity;
    auto split = split_headers(raw);
    entity.headers = std::move(split.headers);
    apply_headers(entity);
    auto body = raw.substr(std::min(split.body_start, raw.size()));

    if (entity.media_type == "multipart")
    {
        auto boundary = entity.parameters.find("boundary");
        if (boundary == entity.parameters.end() || boundary->second.empty() || depth >= max_depth)
        {
            entity.malformed = true;
            entity.body = std::string(body);
            return entity;
        }
        split_multipart(entity, body, boundary->second, depth);
        if (entity.children.empty())
            entity.body = std::string(body);
        return entity;
    }
    entity.body = std::string(body);
    return entity;
}

void number_parts(mime_entity& entity, const std::string& number)
{
    entity.part_number = number;
    for (std::size_t i = 0; i < entity.children.size(); ++i)
    {
        auto k = std::to_string(i + 1);
        number_parts(entity.children[i], number.empty() ? k : number + "." + k);
    }
}

void number_root(mime_entity& root)
{
    if (root.is_multipart())
        number_parts(root, "");
    else
        root.part_number = "1";
}

void serialize_into(const mime_entity& entity, std::string& out)
{
    for (const auto& header : entity.headers)
        out += header.name + ": " + header.value + "\r\n";
    out += "\r\n";
    if (!entity.is_multipart())
    {
        out += entity.body;
        return;
    }
    const auto& boundary = entity.parameters.at("boundary");
    for (const auto& child : entity.children)
    {
        out += "--" + boundary + "\r\n";
        serialize_into(child, out);
        out += "\r\n";
    }
    out += "--" + boundary + "--\r\n";
}

const mime_entity* first_text_leaf(const mime_entity& entity, std::string_view subtype)
{
    if (!entity.is_multipart())
    {
        if (entity.media_type == "text" && (subtype.empty() || entity.media_subtype == subtype) &&
            !(entity.disposition && entity.disposition->kind == disposition_kind::attachment))
            return &entity;
        return nullptr;
    }
    for (const auto& child : entity.children)
        if (const auto* found = first_text_leaf(child, subtype))
            return found;
    return nullptr;
}

bool looks_like_message_headers(std::string_view payload)
{
    static const std::set<std::string> known = {
        "content-type", "content-transfer-encoding", "mime-version", "from", "to", "subject", "date",
        "message-id", "received", "return-path", "content-disposition", "cc", "reply-to",
    };
    auto split = split_headers(payload);
    if (!split.has_headers || split.body_start >= payload.size() + 1)
        return false;
    // the block must end in a real blank line
    auto before = payload.substr(0, split.body_start);
    if (!(before.size() >= 2 && before.substr(before.size() - 2) == "\n\n") &&
        !(before.size() >= 4 && before.substr(before.size() - 4) == "\r\n\r\n"))
        return false;
    return std::any_of(split.headers.begin(), split.headers.end(),
                       [](const header_field& h) { return known.count(lower(h.name)) > 0; });
}

bool looks_textual(std::string_view bytes)
{
    return std::none_of(bytes.begin(), bytes.end(), [](char c) {
        auto u = static_cast<unsigned char>(c);
        return (u < 0x20 && c != '\t' && c != '\r' && c != '\n' && c != '\f') || u == 0x7F;
    });
}

bool has_qp_escape(std::string_view text)
{
    for (std::size_t i = 0; i + 1 < text.size(); ++i)
    {
        if (text[i] != '=')
            continue;
        if (text[i + 1] == '\n' || (text[i + 1] == '\r' && i + 2 < text.size() && text[i + 2] == '\n'))
            return true;
        if (i + 2 < text.size() && hex_value(text[i + 1]) >= 0 && hex_value(text[i + 2]) >= 0)
            return true;
    }
    return false;
}

std::string sniff_decode(std::string_view payload)
{
    std::string compact;
    bool base64_shape = true;
    for (char c : payload)
    {
        if (c == '\r' || c == '\n')
            continue;
        if (base64_value(c) < 0 && c != '=')
        {
            base64_shape = false;
            break;
        }
        compact += c;
    }
    if (base64_shape && compact.size() >= 8 && compact.size() % 4 == 0)
    {
        try
        {
            auto decoded = decode_base64(compact);
            if (looks_textual(decoded))
                return decoded;
        }
        catch (const error&)
        {
        }
    }
    if (has_qp_escape(payload))
        return decode_quoted_printable(payload);
    return std::string(payload);
}

std::string normalize_newlines(std::string_view text)
{
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i)
    {
        if (text[i] == '\r')
        {
            out += '\n';
            if (i + 1 < text.size() && text[i + 1] == '\n')
                ++i;
        }
        else
            out += text[i];
    }
    return out;
}

bool is_attachment_leaf(const mime_entity& entity)
{
    if (entity.is_multipart())
        return false;
    if (entity.disposition && entity.disposition->kind == disposition_kind::attachment)
        return true;
    static const std::map<std::string, std::string> none;
    return attachment_filename(entity.disposition ? entity.disposition->parameters : none, entity.parameters).has_value();
}

template <typename Visitor>
void for_each_leaf(const mime_entity& entity, Visitor&& visit)
{
    if (!entity.is_multipart())
    {
        visit(entity);
        return;
    }
    for (const auto& child : entity.children)
        for_each_leaf(child, visit);
}

std::vector<attachment> collect_attachments(const mime_entity& root, message_id id, bool with_content)
{
    std::vector<attachment> out;
    static const std::map<std::string, std::string> none;
    for_each_leaf(root, [&](const mime_entity& leaf) {
        if (!is_attachment_leaf(leaf))
            return;
        auto name = attachment_filename(leaf.disposition ? leaf.disposition->parameters : none, leaf.parameters);
        attachment item{id, leaf.part_number, sanitize_filename(name.value_or(""), leaf.part_number), leaf.full_type(), {}};
        if (with_content)
            item.content = leaf.decoded_body();
        out.push_back(std::move(item));
    });
    return out;
}

} // namespace

// ---- transfer encodings ----

std::string decode_base64(std::string_view text)
{
    std::string symbols;
    symbols.reserve(text.size());
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c)))
            symbols += c;

    std::size_t padding = 0;
    while (padding < symbols.size() && symbols[symbols.size() - 1 - padding] == '=')
        ++padding;
    std::size_t data = symbols.size() - padding;
    if (padding > 2)
        throw error(errc::invalid_base64, "too much base64 padding");
    if (data % 4 == 1)
        throw error(errc::invalid_base64, "dangling base64 symbol");
    if (padding > 0 && (symbols.size() % 4 != 0 || (4 - data % 4) % 4 != padding))
        throw error(errc::invalid_base64, "inconsistent base64 padding");

    std::string out;
    out.reserve(data * 3 / 4);
    std::uint32_t accumulator = 0;
    int bits = 0;
    for (std::size_t i = 0; i < data; ++i)
    {
        int value = base64_value(symbols[i]);
        if (value < 0)
            throw error(errc::invalid_base64, "invalid base64 symbol");
        accumulator = (accumulator << 6) | static_cast<std::uint32_t>(value);
        bits += 6;
        if (bits >= 8)
        {
            bits -= 8;
            out += static_cast<char>((accumulator >> bits) & 0xFF);
        }
    }
    return out;
}

std::string encode_base64(std::string_view bytes, std::size_t line_length)
{
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4 + 8);
    std::size_t column = 0;
    auto put = [&](char c) {
        if (line_length > 0 && column == line_length)
        {
            out += "\r\n";
            column = 0;
        }
        out += c;
        ++column;
    };
    for (std::size_t i = 0; i < bytes.size(); i += 3)
    {
        std::uint32_t chunk = static_cast<unsigned char>(bytes[i]) << 16;
        std::size_t n = std::min<std::size_t>(3, bytes.size() - i);
        if (n > 1)
            chunk |= static_cast<unsigned char>(bytes[i + 1]) << 8;
        if (n > 2)
            chunk |= static_cast<unsigned char>(bytes[i + 2]);
        put(base64_alphabet[(chunk >> 18) & 0x3F]);
        put(base64_alphabet[(chunk >> 12) & 0x3F]);
        put(n > 1 ? base64_alphabet[(chunk >> 6) & 0x3F] : '=');
        put(n > 2 ? base64_alphabet[chunk & 0x3F] : '=');
    }
    return out;
}

std::string decode_quoted_printable(std::string_view bytes)
{
    std::string out;
    out.reserve(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
    {
        char c = bytes[i];
        if (c != '=')
        {
            out += c;
            continue;
        }
        if (i + 1 < bytes.size() && bytes[i + 1] == '\n')
        {
            i += 1;
            continue;
        }
        if (i + 2 < bytes.size() && bytes[i + 1] == '\r' && bytes[i + 2] == '\n')
        {
            i += 2;
            continue;
        }
        if (i + 2 < bytes.size() && hex_value(bytes[i + 1]) >= 0 && hex_value(bytes[i + 2]) >= 0)
        {
            out += static_cast<char>(hex_value(bytes[i + 1]) * 16 + hex_value(bytes[i + 2]));
            i += 2;
            continue;
        }
        out += c;
    }
    return out;
}

std::string decode_transfer(std::string_view body, transfer_encoding encoding)
{
    switch (encoding)
    {
        case transfer_encoding::base64:
            try
            {
                return decode_base64(body);
            }
            catch (const error&)
            {
                // tolerate trailing garbage after the last full quantum
                std::string clean;
                for (char c : body)
                    if (base64_value(c) >= 0)
                        clean += c;
                clean.resize(clean.size() - clean.size() % 4);
                return decode_base64(clean);
            }
        case transfer_encoding::quoted_printable:
            return decode_quoted_printable(body);
        default:
            return std::string(body);
    }
}

// ---- charsets ----

bool is_valid_utf8(std::string_view bytes)
{
    std::size_t i = 0;
    while (i < bytes.size())
    {
        auto c = static_cast<unsigned char>(bytes[i]);
        std::size_t extra;
        char32_t cp;
        if (c < 0x80)
        {
            ++i;
            continue;
        }
        if (c >= 0xC2 && c <= 0xDF)
        {
            extra = 1;
            cp = c & 0x1F;
        }
        else if (c >= 0xE0 && c <= 0xEF)
        {
            extra = 2;
            cp = c & 0x0F;
        }
        else if (c >= 0xF0 && c <= 0xF4)
        {
            extra = 3;
            cp = c & 0x07;
        }
        else
            return false;
        if (i + extra >= bytes.size())
            return false;
        for (std::size_t k = 1; k <= extra; ++k)
        {
            auto cc = static_cast<unsigned char>(bytes[i + k]);
            if ((cc & 0xC0) != 0x80)
                return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        if ((extra == 2 && cp < 0x800) || (extra == 3 && (cp < 0x10000 || cp > 0x10FFFF)) || (cp >= 0xD800 && cp <= 0xDFFF))
            return false;
        i += extra + 1;
    }
    return true;
}

converted_text to_utf8(std::string_view bytes, std::string_view charset)
{
    auto name = lower(trim(charset));
    if (name.size() >= 2 && name.front() == '"' && name.back() == '"')
        name = name.substr(1, name.size() - 2);

    if (name.empty() || name == "utf-8" || name == "utf8" || name == "us-ascii" || name == "ascii")
    {
        if (is_valid_utf8(bytes))
            return {std::string(bytes), false};
        return {latin1_to_utf8(bytes), true};
    }
    if (name == "iso-8859-1" || name == "iso8859-1" || name == "iso_8859-1" || name == "latin1" || name == "latin-1" ||
        name == "l1")
        return {latin1_to_utf8(bytes), false};
    if (name == "windows-1252" || name == "cp1252" || name == "x-cp1252")
        return {windows1252_to_utf8(bytes), false};
    return {latin1_to_utf8(bytes), true};
}

std::string decode_mime_header(std::string_view text)
{
    std::string out;
    std::string pending_space;
    bool after_word = false;
    std::size_t i = 0;

    auto try_word = [&](std::size_t at, std::size_t& end, std::string& decoded) {
        // =?charset?X?payload?=
        if (text.substr(at, 2) != "=?")
            return false;
        auto q1 = text.find('?', at + 2);
        if (q1 == std::string_view::npos || q1 + 2 >= text.size() || text[q1 + 2] != '?')
            return false;
        char mode = static_cast<char>(std::toupper(static_cast<unsigned char>(text[q1 + 1])));
        if (mode != 'B' && mode != 'Q')
            return false;
        auto close = text.find("?=", q1 + 3);
        if (close == std::string_view::npos)
            return false;
        auto charset = text.substr(at + 2, q1 - at - 2);
        auto payload = text.substr(q1 + 3, close - q1 - 3);
        if (charset.empty() || charset.find_first_of(" \t\r\n") != std::string_view::npos ||
            payload.find_first_of(" \t\r\n?") != std::string_view::npos)
            return false;
        if (auto star = charset.find('*'); star != std::string_view::npos)
            charset = charset.substr(0, star);
        std::string bytes;
        if (mode == 'B')
        {
            try
            {
                bytes = decode_base64(payload);
            }
            catch (const error&)
            {
                return false;
            }
        }
        else
        {
            std::string underscored(payload);
            std::replace(underscored.begin(), underscored.end(), '_', ' ');
            bytes = decode_quoted_printable(underscored);
        }
        decoded = to_utf8(bytes, charset).utf8;
        end = close + 2;
        return true;
    };

    while (i < text.size())
    {
        std::size_t end = 0;
        std::string decoded;
        if (text[i] == '=' && try_word(i, end, decoded))
        {
            if (!after_word)
                out += pending_space;
            pending_space.clear();
            out += decoded;
            after_word = true;
            i = end;
            continue;
        }
        char c = text[i];
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n')
        {
            pending_space += c;
            ++i;
            continue;
        }
        out += pending_space;
        pending_space.clear();
        after_word = false;
        out += c;
        ++i;
    }
    out += pending_space;
    return out;
}

// ---- entities ----

const std::string* mime_entity::header(std::string_view name) const
{
    auto wanted = lower(name);
    for (const auto& field : headers)
        if (lower(field.name) == wanted)
            return &field.value;
    return nullptr;
}

std::map<std::string, std::string> parse_header_parameters(std::string_view text)
{
    std::map<std::string, std::string> raw;
    std::size_t i = 0;
    while (i < text.size())
    {
        while (i < text.size() && (std::isspace(static_cast<unsigned char>(text[i])) || text[i] == ';'))
            ++i;
        std::size_t key_start = i;
        while (i < text.size() && text[i] != '=' && text[i] != ';')
            ++i;
        auto key = lower(trim(text.substr(key_start, i - key_start)));
        if (i >= text.size() || text[i] != '=')
            continue;
        ++i;
        while (i < text.size() && (text[i] == ' ' || text[i] == '\t'))
            ++i;
        std::string value;
        if (i < text.size() && text[i] == '"')
        {
            ++i;
            while (i < text.size() && text[i] != '"')
            {
                if (text[i] == '\\' && i + 1 < text.size())
                    ++i;
                value += text[i++];
            }
            if (i < text.size())
                ++i;
            while (i < text.size() && text[i] != ';')
                ++i;
        }
        else
        {
            std::size_t value_start = i;
            while (i < text.size() && text[i] != ';')
                ++i;
            value = std::string(trim(text.substr(value_start, i - value_start)));
        }
        if (!key.empty())
            raw[key] = value;
    }
    return combine_rfc2231(raw);
}

parsed_content_type parse_content_type(std::string_view value)
{
    parsed_content_type result;
    auto semicolon = value.find(';');
    auto type = trim(value.substr(0, semicolon));
    auto slash = type.find('/');
    if (slash != std::string_view::npos)
    {
        result.media_type = lower(trim(type.substr(0, slash)));
        result.media_subtype = lower(trim(type.substr(slash + 1)));
    }
    if (result.media_type.empty() || result.media_subtype.empty())
    {
        result.media_type.clear();
        result.media_subtype.clear();
    }
    if (semicolon != std::string_view::npos)
        result.parameters = parse_header_parameters(value.substr(semicolon + 1));
    return result;
}

mime_entity parse_mime(std::string_view raw)
{
    auto root = parse_entity(raw, 0);
    number_root(root);
    return root;
}

mime_entity parse_text_section(std::string_view raw)
{
    std::size_t pos = 0;
    while (pos < raw.size())
    {
        auto line = line_at(raw, pos);
        auto content = trim(line.content);
        if (content.size() > 2 && content.substr(0, 2) == "--" && content.find(' ') == std::string_view::npos)
        {
            std::string boundary(content.substr(2));
            if (boundary.size() > 2 && boundary.substr(boundary.size() - 2) == "--")
                break;
            mime_entity root;
            root.media_type = "multipart";
            root.media_subtype = "mixed";
            root.parameters["boundary"] = boundary;
            split_multipart(root, raw, boundary, 0);
            number_root(root);
            return root;
        }
        if (!content.empty())
            break;
        pos = line.next;
    }
    mime_entity leaf;
    leaf.body = std::string(raw);
    number_root(leaf);
    return leaf;
}

std::string serialize_mime(const mime_entity& entity)
{
    std::string out;
    serialize_into(entity, out);
    return out;
}

// ---- text and attachments ----

std::string clean_msg_text(std::string_view payload)
{
    std::string bytes;
    std::string charset;
    if (looks_like_message_headers(payload))
    {
        auto entity = parse_mime(payload);
        const mime_entity* leaf = first_text_leaf(entity, "plain");
        if (!leaf)
            leaf = first_text_leaf(entity, "");
        if (!leaf)
            return {};
        bytes = leaf->decoded_body();
        charset = leaf->charset.value_or("");
    }
    else
        bytes = sniff_decode(payload);
    return normalize_newlines(to_utf8(bytes, charset).utf8);
}

std::vector<std::string> clean_msg_text(const std::vector<std::string>& payloads)
{
    std::vector<std::string> out;
    out.reserve(payloads.size());
    for (const auto& payload : payloads)
        out.push_back(clean_msg_text(payload));
    return out;
}

std::optional<std::string> attachment_filename(const std::map<std::string, std::string>& disposition_params,
                                               const std::map<std::string, std::string>& type_params)
{
    for (const auto* params : {&disposition_params, &type_params})
    {
        auto combined = combine_rfc2231(*params);
        for (const char* key : {"filename", "name"})
        {
            auto it = combined.find(key);
            if (it != combined.end() && !trim(it->second).empty())
                return decode_mime_header(it->second);
        }
    }
    return std::nullopt;
}

std::string sanitize_filename(std::string_view name, std::string_view part_number)
{
    std::string normalized(name);
    std::replace(normalized.begin(), normalized.end(), '\\', '/');
    auto slash = normalized.rfind('/');
    if (slash != std::string::npos)
        normalized.erase(0, slash + 1);

    std::string cleaned;
    for (char c : normalized)
    {
        auto u = static_cast<unsigned char>(c);
        if (u < 0x20 || u == 0x7F)
            continue;
        cleaned += c;
    }
    std::size_t start = 0;
    while (start < cleaned.size() && (cleaned[start] == '.' || cleaned[start] == ' '))
        ++start;
    cleaned.erase(0, start);
    while (!cleaned.empty() && cleaned.back() == ' ')
        cleaned.pop_back();

    constexpr std::size_t max_bytes = 200;
    if (cleaned.size() > max_bytes)
    {
        std::size_t cut = max_bytes;
        while (cut > 0 && (static_cast<unsigned char>(cleaned[cut]) & 0xC0) == 0x80)
            --cut;
        cleaned.resize(cut);
    }
    if (cleaned.empty())
        return "part-" + std::string(part_number.empty() ? "1" : part_number) + ".bin";
    return cleaned;
}

std::vector<attachment> list_attachments(const mime_entity& entity, message_id id)
{
    return collect_attachments(entity, id, false);
}

std::vector<attachment> extract_attachments(const mime_entity& entity, message_id id)
{
    return collect_attachments(entity, id, true);
}

} // namespace mailpost
