#include <mailpost/mockserver.hpp>

#include <mailpost/error.hpp>
#include <mailpost/mime.hpp>

#include "tls_stream.hpp"

#include <json.hpp>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/x509v3.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace mailpost::mock
{

namespace
{

using namespace std::chrono_literals;

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

bool contains_nocase(std::string_view haystack, std::string_view needle)
{
    if (needle.empty())
        return true;
    return lower(haystack).find(lower(needle)) != std::string::npos;
}

[[noreturn]] void bad_syntax(const std::string& what)
{
    throw error(errc::malformed_response, what);
}

// ---- tokenizer ----

class token_reader
{
public:
    explicit token_reader(std::string_view text) : text_(text)
    {
    }

    std::vector<token> read_all()
    {
        auto out = read_sequence(false);
        if (pos_ < text_.size())
            bad_syntax("unbalanced ')'");
        return out;
    }

private:
    std::vector<token> read_sequence(bool in_list)
    {
        std::vector<token> out;
        for (;;)
        {
            while (pos_ < text_.size() && text_[pos_] == ' ')
                ++pos_;
            if (pos_ >= text_.size())
            {
                if (in_list)
                    bad_syntax("unterminated list");
                return out;
            }
            char c = text_[pos_];
            if (c == ')')
            {
                if (!in_list)
                    return out;
                ++pos_;
                return out;
            }
            if (c == '(')
            {
                ++pos_;
                token list{token::kind::list, {}, read_sequence(true)};
                out.push_back(std::move(list));
            }
            else if (c == '"')
                out.push_back(read_quoted());
            else if (c == '{')
                out.push_back(read_literal());
            else
                out.push_back(read_atom());
        }
    }

    token read_quoted()
    {
        ++pos_;
        std::string value;
        while (pos_ < text_.size() && text_[pos_] != '"')
        {
            char c = text_[pos_++];
            if (c == '\\')
            {
                if (pos_ >= text_.size() || (text_[pos_] != '\\' && text_[pos_] != '"'))
                    bad_syntax("invalid escape in quoted string");
                c = text_[pos_++];
            }
            else if (c == '\r' || c == '\n')
                bad_syntax("line break in quoted string");
            value += c;
        }
        if (pos_ >= text_.size())
            bad_syntax("unterminated quoted string");
        ++pos_;
        return {token::kind::string, std::move(value), {}};
    }

    token read_literal()
    {
        auto close = text_.find('}', pos_);
        if (close == std::string_view::npos)
            bad_syntax("unterminated literal length");
        auto digits = text_.substr(pos_ + 1, close - pos_ - 1);
        if (!digits.empty() && digits.back() == '+')
            digits.remove_suffix(1);
        std::size_t length = 0;
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), length);
        if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size())
            bad_syntax("invalid literal length");
        if (text_.substr(close + 1, 2) != "\r\n" || close + 3 + length > text_.size())
            bad_syntax("truncated literal");
        pos_ = close + 3 + length;
        return {token::kind::string, std::string(text_.substr(close + 3, length)), {}};
    }

    static bool is_section_prefix(std::string_view head)
    {
        auto name = upper(head);
        return name == "BODY" || name == "BODY.PEEK" || name == "BINARY" || name == "BINARY.PEEK" ||
               name == "BINARY.SIZE";
    }

    token read_atom()
    {
        std::size_t start = pos_;
        while (pos_ < text_.size())
        {
            char c = text_[pos_];
            if (c == '[' && is_section_prefix(text_.substr(start, pos_ - start)))
            {
                // BODY[...] sections may contain spaces and parentheses
                auto close = text_.find(']', pos_);
                if (close == std::string_view::npos)
                    bad_syntax("unbalanced '['");
                pos_ = close + 1;
                continue;
            }
            if (c == ' ' || c == '(' || c == ')')
                break;
            ++pos_;
        }
        return {token::kind::atom, std::string(text_.substr(start, pos_ - start)), {}};
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

// ---- response building ----

std::string imap_string(std::string_view value)
{
    bool needs_literal = std::any_of(value.begin(), value.end(), [](char c) {
        auto u = static_cast<unsigned char>(c);
        return u >= 0x80 || c == '\r' || c == '\n' || c == '\0';
    });
    if (needs_literal)
        return literal(value);
    std::string out = "\"";
    for (char c : value)
    {
        if (c == '"' || c == '\\')
            out += '\\';
        out += c;
    }
    return out + "\"";
}

std::string nstring(const std::optional<std::string>& value)
{
    return value ? imap_string(*value) : "NIL";
}

std::string_view trim(std::string_view text)
{
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front())))
        text.remove_prefix(1);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back())))
        text.remove_suffix(1);
    return text;
}

// Splits an address header into top-level items, tracking quotes, angle brackets, comments and groups.
struct address_item
{
    enum class kind
    {
        mailbox,
        group_start,
        group_end
    };
    kind type;
    std::string text;
};

std::vector<address_item> split_addresses(std::string_view value)
{
    std::vector<address_item> items;
    std::string current;
    bool quoted = false;
    int angle = 0;
    int comment = 0;
    auto flush = [&] {
        auto t = trim(current);
        if (!t.empty())
            items.push_back({address_item::kind::mailbox, std::string(t)});
        current.clear();
    };
    for (std::size_t i = 0; i < value.size(); ++i)
    {
        char c = value[i];
        if (quoted)
        {
            current += c;
            if (c == '\\' && i + 1 < value.size())
                current += value[++i];
            else if (c == '"')
                quoted = false;
            continue;
        }
        if (comment > 0)
        {
            current += c;
            if (c == '(')
                ++comment;
            else if (c == ')')
                --comment;
            continue;
        }
        if (c == '"')
            quoted = true;
        else if (c == '(')
            ++comment;
        else if (c == '<')
            ++angle;
        else if (c == '>')
            angle = std::max(0, angle - 1);
        if (angle == 0 && c == ',')
        {
            flush();
            continue;
        }
        if (angle == 0 && c == ':')
        {
            items.push_back({address_item::kind::group_start, std::string(trim(current))});
            current.clear();
            continue;
        }
        if (angle == 0 && c == ';')
        {
            flush();
            items.push_back({address_item::kind::group_end, {}});
            continue;
        }
        current += c;
    }
    flush();
    return items;
}

std::string unquote_phrase(std::string_view text)
{
    text = trim(text);
    std::string out;
    bool quoted = false;
    for (std::size_t i = 0; i < text.size(); ++i)
    {
        char c = text[i];
        if (c == '"')
        {
            quoted = !quoted;
            continue;
        }
        if (c == '\\' && quoted && i + 1 < text.size())
            c = text[++i];
        out += c;
    }
    return out;
}

std::string strip_comments(std::string_view text)
{
    std::string out;
    int depth = 0;
    for (char c : text)
    {
        if (c == '(')
            ++depth;
        else if (c == ')' && depth > 0)
            --depth;
        else if (depth == 0)
            out += c;
    }
    return std::string(trim(out));
}

std::string address_structure(std::string_view mailbox_text)
{
    std::optional<std::string> name;
    std::string spec;
    auto open = mailbox_text.find('<');
    auto close = mailbox_text.rfind('>');
    if (open != std::string_view::npos && close != std::string_view::npos && close > open)
    {
        auto phrase = unquote_phrase(mailbox_text.substr(0, open));
        if (!phrase.empty())
            name = phrase;
        spec = std::string(trim(mailbox_text.substr(open + 1, close - open - 1)));
    }
    else
        spec = strip_comments(mailbox_text);
    auto at = spec.rfind('@');
    std::optional<std::string> mailbox = at == std::string::npos ? spec : spec.substr(0, at);
    std::optional<std::string> host;
    if (at != std::string::npos)
        host = spec.substr(at + 1);
    return "(" + nstring(name) + " NIL " + nstring(mailbox) + " " + nstring(host) + ")";
}

std::string address_list(const std::string* value)
{
    if (!value)
        return "NIL";
    std::string out;
    for (const auto& item : split_addresses(*value))
    {
        switch (item.type)
        {
            case address_item::kind::mailbox:
                out += address_structure(item.text);
                break;
            case address_item::kind::group_start:
                out += "(NIL NIL " + imap_string(item.text) + " NIL)";
                break;
            case address_item::kind::group_end:
                out += "(NIL NIL NIL NIL)";
                break;
        }
    }
    return out.empty() ? "NIL" : "(" + out + ")";
}

std::optional<std::string> header_value(const mime_entity& entity, std::string_view name)
{
    if (const auto* value = entity.header(name))
        return *value;
    return std::nullopt;
}

std::string envelope_of(const mime_entity& root)
{
    const auto* from = root.header("From");
    const auto* sender = root.header("Sender");
    const auto* reply_to = root.header("Reply-To");
    std::string out = "(";
    out += nstring(header_value(root, "Date")) + " ";
    out += nstring(header_value(root, "Subject")) + " ";
    out += address_list(from) + " ";
    out += address_list(sender ? sender : from) + " ";
    out += address_list(reply_to ? reply_to : from) + " ";
    out += address_list(root.header("To")) + " ";
    out += address_list(root.header("Cc")) + " ";
    out += address_list(root.header("Bcc")) + " ";
    out += nstring(header_value(root, "In-Reply-To")) + " ";
    out += nstring(header_value(root, "Message-ID"));
    return out + ")";
}

std::string param_list(const std::map<std::string, std::string>& params)
{
    if (params.empty())
        return "NIL";
    std::string out = "(";
    bool first = true;
    for (const auto& [key, value] : params)
    {
        if (!first)
            out += " ";
        first = false;
        out += imap_string(upper(key)) + " " + imap_string(value);
    }
    return out + ")";
}

std::string disposition_of(const mime_entity& entity)
{
    if (!entity.disposition)
        return "NIL";
    auto kind = entity.disposition->kind == disposition_kind::inline_part ? "INLINE" : "ATTACHMENT";
    return std::string("(\"") + kind + "\" " + param_list(entity.disposition->parameters) + ")";
}

std::size_t line_count(std::string_view body)
{
    auto lines = static_cast<std::size_t>(std::count(body.begin(), body.end(), '\n'));
    if (!body.empty() && body.back() != '\n')
        ++lines;
    return lines;
}

std::string bodystructure_of(const mime_entity& entity)
{
    if (entity.is_multipart())
    {
        std::string out = "(";
        for (const auto& child : entity.children)
            out += bodystructure_of(child);
        std::map<std::string, std::string> params = entity.parameters;
        out += " " + imap_string(upper(entity.media_subtype)) + " " + param_list(params) + " " + disposition_of(entity) +
               " NIL NIL)";
        return out;
    }
    std::string out = "(" + imap_string(upper(entity.media_type)) + " " + imap_string(upper(entity.media_subtype)) + " " +
                      param_list(entity.parameters) + " NIL NIL " +
                      imap_string(upper(std::string(to_string(entity.encoding)))) + " " + std::to_string(entity.body.size());
    if (entity.media_type == "text")
        out += " " + std::to_string(line_count(entity.body));
    else if (entity.media_type == "message" && entity.media_subtype == "rfc822")
    {
        auto inner = parse_mime(entity.body);
        out += " " + envelope_of(inner) + " " + bodystructure_of(inner) + " " + std::to_string(line_count(entity.body));
    }
    out += " NIL " + disposition_of(entity) + " NIL NIL)";
    return out;
}

// ---- fixture message views ----

struct message_view
{
    const fixture_message* message = nullptr;
    std::uint32_t sequence = 0;
    std::string_view header_block;
    std::string_view body;
    /// (lowercase name, unfolded value)
    std::vector<std::pair<std::string, std::string>> fields;
    /// (lowercase name, raw lines including CRLF)
    std::vector<std::pair<std::string, std::string>> raw_fields;
};

message_view view_of(const fixture_message& message, std::uint32_t sequence)
{
    message_view view;
    view.message = &message;
    view.sequence = sequence;
    std::string_view raw = message.raw;
    std::size_t split = raw.find("\r\n\r\n");
    std::size_t skip = 4;
    auto lf_split = raw.find("\n\n");
    if (lf_split != std::string_view::npos && (split == std::string_view::npos || lf_split < split))
    {
        split = lf_split;
        skip = 2;
    }
    if (split == std::string_view::npos)
    {
        view.header_block = raw;
        view.body = {};
    }
    else
    {
        view.header_block = raw.substr(0, split + skip);
        view.body = raw.substr(split + skip);
    }

    std::size_t pos = 0;
    auto block = view.header_block;
    while (pos < block.size())
    {
        auto end = block.find('\n', pos);
        std::size_t next = end == std::string_view::npos ? block.size() : end + 1;
        auto line = block.substr(pos, next - pos);
        auto content = line;
        while (!content.empty() && (content.back() == '\n' || content.back() == '\r'))
            content.remove_suffix(1);
        if (content.empty())
            break;
        if ((content.front() == ' ' || content.front() == '\t') && !view.fields.empty())
        {
            view.fields.back().second += std::string(content);
            view.raw_fields.back().second += std::string(line);
        }
        else
        {
            auto colon = content.find(':');
            auto name = lower(content.substr(0, colon == std::string_view::npos ? 0 : colon));
            view.fields.emplace_back(name, colon == std::string_view::npos ? std::string()
                                                                           : std::string(trim(content.substr(colon + 1))));
            view.raw_fields.emplace_back(name, std::string(line));
        }
        pos = next;
    }
    return view;
}

struct day_stamp
{
    int year = 0;
    int month = 0;
    int day = 0;

    friend auto operator<=>(const day_stamp&, const day_stamp&) = default;
};

int month_index(std::string_view name)
{
    static constexpr std::array<std::string_view, 12> months = {"jan", "feb", "mar", "apr", "may", "jun",
                                                                "jul", "aug", "sep", "oct", "nov", "dec"};
    auto key = lower(name);
    for (std::size_t i = 0; i < months.size(); ++i)
        if (months[i] == key)
            return static_cast<int>(i) + 1;
    return 0;
}

std::optional<day_stamp> parse_day(std::string_view text)
{
    text = trim(text);
    auto d1 = text.find('-');
    auto d2 = d1 == std::string_view::npos ? d1 : text.find('-', d1 + 1);
    if (d2 == std::string_view::npos)
        return std::nullopt;
    day_stamp stamp;
    auto day_text = trim(text.substr(0, d1));
    auto year_text = text.substr(d2 + 1, 4);
    auto [p1, e1] = std::from_chars(day_text.data(), day_text.data() + day_text.size(), stamp.day);
    auto [p2, e2] = std::from_chars(year_text.data(), year_text.data() + year_text.size(), stamp.year);
    stamp.month = month_index(text.substr(d1 + 1, d2 - d1 - 1));
    if (e1 != std::errc() || e2 != std::errc() || stamp.month == 0 || year_text.size() != 4)
        return std::nullopt;
    static const int month_days[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    bool leap = (stamp.year % 4 == 0 && stamp.year % 100 != 0) || stamp.year % 400 == 0;
    int last = month_days[stamp.month - 1] + (stamp.month == 2 && leap ? 1 : 0);
    if (stamp.day < 1 || stamp.day > last)
        return std::nullopt;
    return stamp;
}

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d)
{
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

// ---- sequence sets ----

bool in_sequence_set(std::string_view set, std::uint32_t value, std::uint32_t largest)
{
    std::size_t pos = 0;
    while (pos <= set.size())
    {
        auto comma = set.find(',', pos);
        auto range = set.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
        auto colon = range.find(':');
        auto number = [&](std::string_view text) -> std::uint32_t {
            if (text == "*")
                return largest;
            std::uint32_t n = 0;
            auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
            if (ec != std::errc() || ptr != text.data() + text.size() || n == 0)
                bad_syntax("invalid sequence set");
            return n;
        };
        if (colon == std::string_view::npos)
        {
            if (number(range) == value)
                return true;
        }
        else
        {
            auto a = number(range.substr(0, colon));
            auto b = number(range.substr(colon + 1));
            if (value >= std::min(a, b) && value <= std::max(a, b))
                return true;
        }
        if (comma == std::string_view::npos)
            break;
        pos = comma + 1;
    }
    return false;
}

bool is_sequence_set(std::string_view text)
{
    return !text.empty() && std::all_of(text.begin(), text.end(), [](char c) {
        return std::isdigit(static_cast<unsigned char>(c)) || c == ':' || c == ',' || c == '*';
    });
}

// ---- TLS identity ----

struct tls_identity
{
    detail::ssl_ctx_ptr context;
    std::string pem;
};

const tls_identity& identity()
{
    static const tls_identity id = [] {
        tls_identity out;
        EVP_PKEY* key = EVP_EC_gen("P-256");
        X509* cert = X509_new();
        if (!key || !cert)
            throw error(errc::tls_failure, detail::openssl_error_text("cannot create mock certificate"));
        X509_set_version(cert, 2);
        ASN1_INTEGER_set(X509_get_serialNumber(cert), static_cast<long>(std::random_device{}() & 0x7FFFFFFF));
        X509_gmtime_adj(X509_getm_notBefore(cert), -3600);
        X509_gmtime_adj(X509_getm_notAfter(cert), 60L * 60 * 24 * 365);
        X509_set_pubkey(cert, key);
        X509_NAME* name = X509_get_subject_name(cert);
        X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC, reinterpret_cast<const unsigned char*>("localhost"), -1, -1, 0);
        X509_set_issuer_name(cert, name);
        X509V3_CTX ctx;
        X509V3_set_ctx_nodb(&ctx);
        X509V3_set_ctx(&ctx, cert, cert, nullptr, nullptr, 0);
        for (auto [nid, value] : {std::pair{NID_subject_alt_name, "DNS:localhost,IP:127.0.0.1"},
                                  std::pair{NID_basic_constraints, "critical,CA:TRUE"},
                                  std::pair{NID_ext_key_usage, "serverAuth"}})
        {
            X509_EXTENSION* ext = X509V3_EXT_conf_nid(nullptr, &ctx, nid, value);
            X509_add_ext(cert, ext, -1);
            X509_EXTENSION_free(ext);
        }
        X509_sign(cert, key, EVP_sha256());

        BIO* bio = BIO_new(BIO_s_mem());
        PEM_write_bio_X509(bio, cert);
        char* data = nullptr;
        long size = BIO_get_mem_data(bio, &data);
        out.pem.assign(data, static_cast<std::size_t>(size));
        BIO_free(bio);

        out.context.reset(SSL_CTX_new(TLS_server_method()));
        SSL_CTX_set_min_proto_version(out.context.get(), TLS1_2_VERSION);
        SSL_CTX_use_certificate(out.context.get(), cert);
        SSL_CTX_use_PrivateKey(out.context.get(), key);
        X509_free(cert);
        EVP_PKEY_free(key);
        return out;
    }();
    return id;
}

} // namespace

// ---- public helpers ----

std::vector<token> tokenize(std::string_view text)
{
    return token_reader(text).read_all();
}

received_command parse_command(std::string_view wire)
{
    received_command cmd;
    if (wire.ends_with("\r\n"))
        wire.remove_suffix(2);
    else if (wire.ends_with("\n"))
        wire.remove_suffix(1);
    cmd.line = std::string(wire);
    auto space = wire.find(' ');
    if (space == std::string_view::npos || space == 0)
        bad_syntax("command without tag and verb");
    cmd.tag = std::string(wire.substr(0, space));
    auto rest = wire.substr(space + 1);
    auto verb_end = rest.find(' ');
    cmd.verb = upper(rest.substr(0, verb_end));
    rest = verb_end == std::string_view::npos ? std::string_view{} : rest.substr(verb_end + 1);
    if (cmd.verb == "UID")
    {
        auto sub_end = rest.find(' ');
        cmd.verb += " " + upper(rest.substr(0, sub_end));
        rest = sub_end == std::string_view::npos ? std::string_view{} : rest.substr(sub_end + 1);
    }
    if (cmd.verb.empty())
        bad_syntax("empty verb");
    cmd.args = tokenize(rest);
    return cmd;
}

script_step step(std::string verb, std::vector<std::string> untagged, std::string status, std::string text)
{
    script_step s;
    s.verb = std::move(verb);
    s.untagged = std::move(untagged);
    s.status = std::move(status);
    s.text = std::move(text);
    return s;
}

std::string literal(std::string_view bytes)
{
    return "{" + std::to_string(bytes.size()) + "}\r\n" + std::string(bytes);
}

std::optional<std::int64_t> parse_internal_date(std::string_view text)
{
    text = trim(text);
    auto space = text.find(' ');
    if (space == std::string_view::npos)
        return std::nullopt;
    auto day = parse_day(text.substr(0, space));
    auto rest = trim(text.substr(space + 1));
    int hh = 0, mm = 0, ss = 0, zone = 0;
    char sign = '+';
    if (!day || rest.size() < 14 ||
        std::sscanf(std::string(rest).c_str(), "%d:%d:%d %c%4d", &hh, &mm, &ss, &sign, &zone) != 5)
        return std::nullopt;
    if (hh < 0 || hh > 23 || mm < 0 || mm > 59 || ss < 0 || ss > 60 || (sign != '+' && sign != '-') || zone < 0)
        return std::nullopt;
    std::int64_t offset = (zone / 100) * 3600 + (zone % 100) * 60;
    if (sign == '-')
        offset = -offset;
    return days_from_civil(day->year, static_cast<unsigned>(day->month), static_cast<unsigned>(day->day)) * 86400 +
           hh * 3600 + mm * 60 + ss - offset;
}

std::vector<fixture_mailbox> load_fixtures(const std::filesystem::path& dir)
{
    auto read_file = [](const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw error(errc::io_error, "cannot read " + path.string());
        std::ostringstream buffer;
        buffer << in.rdbuf();
        return buffer.str();
    };
    nlohmann::json manifest;
    try
    {
        manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
    }
    catch (const nlohmann::json::exception& e)
    {
        throw error(errc::invalid_argument, std::string("bad fixture manifest: ") + e.what());
    }

    std::vector<fixture_mailbox> out;
    try
    {
        for (const auto& folder : manifest.at("folders"))
        {
            fixture_mailbox box;
            box.folder = folder.at("name").get<std::string>();
            for (const auto& entry : folder.value("messages", nlohmann::json::array()))
            {
                fixture_message message;
                message.uid = entry.at("uid").get<std::uint32_t>();
                message.raw = read_file(dir / entry.at("file").get<std::string>());
                message.flags = entry.value("flags", std::vector<std::string>{});
                message.internal_date = entry.value("internal_date", std::string("01-Jan-2020 00:00:00 +0000"));
                if (!box.messages.empty() && message.uid <= box.messages.back().uid)
                    throw error(errc::invalid_argument, "UIDs in " + box.folder + " are not ascending");
                box.messages.push_back(std::move(message));
            }
            out.push_back(std::move(box));
        }
    }
    catch (const nlohmann::json::exception& e)
    {
        throw error(errc::invalid_argument, std::string("bad fixture manifest: ") + e.what());
    }
    return out;
}

// ---- server ----

struct server::impl
{
    bool scripted = true;
    server_options options;

    mutable std::mutex mutex;
    std::vector<script_step> steps;
    std::vector<bool> consumed;
    std::vector<fixture_mailbox> folders;
    std::vector<std::string> log;
    std::vector<std::string> unexpected;

    std::mutex serve_mutex;
    std::mutex threads_mutex;
    std::vector<std::thread> threads;
    std::atomic<bool> stopping{false};
    int listen_fd = -1;
    std::thread acceptor;

    std::condition_variable idle_cv;
    int active = 0;

    void spawn(std::function<void()> work)
    {
        {
            std::lock_guard lock(mutex);
            ++active;
        }
        std::lock_guard lock(threads_mutex);
        threads.emplace_back([this, work = std::move(work)] {
            try
            {
                work();
            }
            catch (...)
            {
            }
            std::lock_guard lock(mutex);
            --active;
            idle_cv.notify_all();
        });
    }

    std::string read_line(connection& conn)
    {
        for (;;)
        {
            try
            {
                return conn.read_line();
            }
            catch (const error& e)
            {
                if (e.code() != errc::read_timeout || stopping)
                    throw;
            }
        }
    }

    std::string read_exact(connection& conn, std::size_t count)
    {
        for (;;)
        {
            try
            {
                return conn.read_exact(count);
            }
            catch (const error& e)
            {
                if (e.code() != errc::read_timeout || stopping)
                    throw;
            }
        }
    }

    std::string read_command(connection& conn)
    {
        std::string text = read_line(conn);
        for (;;)
        {
            std::string_view view = text;
            if (view.size() < 5 || view.substr(view.size() - 3) != "}\r\n")
                return text;
            auto open = view.rfind('{');
            if (open == std::string_view::npos)
                return text;
            auto digits = view.substr(open + 1, view.size() - open - 4);
            bool non_sync = !digits.empty() && digits.back() == '+';
            if (non_sync)
                digits.remove_suffix(1);
            std::size_t length = 0;
            auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), length);
            if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size())
                return text;
            if (!non_sync)
                conn.write_all("+ Ready for literal data\r\n");
            text += read_exact(conn, length);
            text += read_line(conn);
        }
    }

    void serve(connection conn)
    {
        std::lock_guard serving(serve_mutex);
        if (stopping)
            return;
        session_state state;
        switch (options.greeting)
        {
            case greeting_kind::ok:
                conn.write_all("* OK " + greeting_code() + options.greeting_text + "\r\n");
                break;
            case greeting_kind::preauth:
                state.authenticated = true;
                conn.write_all("* PREAUTH " + options.greeting_text + "\r\n");
                break;
            case greeting_kind::bye:
                conn.write_all("* BYE " + options.greeting_text + "\r\n");
                conn.close();
                return;
        }
        while (!stopping && conn.is_open())
        {
            std::string wire;
            try
            {
                wire = read_command(conn);
            }
            catch (const error&)
            {
                break;
            }
            auto stripped = wire;
            if (stripped.ends_with("\r\n"))
                stripped.resize(stripped.size() - 2);
            else if (stripped.ends_with("\n"))
                stripped.pop_back();
            if (stripped.empty())
                continue;
            {
                std::lock_guard lock(mutex);
                log.push_back(stripped);
            }
            received_command cmd;
            try
            {
                cmd = parse_command(stripped);
            }
            catch (const error& e)
            {
                auto space = stripped.find(' ');
                auto tag = space == std::string::npos ? std::string("*") : stripped.substr(0, space);
                conn.write_all(tag + " BAD " + e.what() + "\r\n");
                continue;
            }
            try
            {
                if (scripted)
                    handle_scripted(conn, cmd);
                else
                    handle_stateful(conn, cmd, state);
            }
            catch (const error& e)
            {
                if (e.code() == errc::connection_closed || e.code() == errc::read_timeout)
                    break;
                if (conn.is_open())
                    conn.write_all(cmd.tag + " BAD " + e.what() + "\r\n");
            }
        }
        conn.close();
    }

    std::string capability_line() const
    {
        std::string out = "CAPABILITY";
        for (const auto& cap : options.capabilities)
            out += " " + cap;
        if (options.within)
            out += " WITHIN";
        return out;
    }

    std::string greeting_code() const
    {
        return scripted ? std::string() : "[" + capability_line() + "] ";
    }

    // ---- scripted ----

    void handle_scripted(connection& conn, const received_command& cmd)
    {
        std::optional<script_step> chosen;
        {
            std::lock_guard lock(mutex);
            // past the first pending strict step only loose steps are eligible
            bool strict_blocked = false;
            for (std::size_t i = 0; i < steps.size(); ++i)
            {
                if (consumed[i] || (strict_blocked && steps[i].strict_order))
                    continue;
                const auto& s = steps[i];
                bool verb_ok = s.verb.empty() || upper(s.verb) == cmd.verb;
                if (verb_ok && (!s.predicate || s.predicate(cmd)))
                {
                    consumed[i] = true;
                    chosen = s;
                    break;
                }
                if (s.strict_order)
                    strict_blocked = true;
            }
            if (!chosen && cmd.verb != "LOGOUT")
                unexpected.push_back(cmd.line);
        }
        if (!chosen)
        {
            if (cmd.verb == "LOGOUT")
            {
                conn.write_all("* BYE logging out\r\n" + cmd.tag + " OK LOGOUT completed\r\n");
                conn.close();
                return;
            }
            conn.write_all(cmd.tag + " BAD unexpected command\r\n");
            return;
        }
        std::string out;
        for (const auto& line : chosen->untagged)
            out += line + "\r\n";
        if (chosen->challenge)
        {
            conn.write_all(out + "+ " + *chosen->challenge + "\r\n");
            out.clear();
            read_line(conn);
        }
        out += cmd.tag + " " + chosen->status + (chosen->text.empty() ? "" : " " + chosen->text) + "\r\n";
        conn.write_all(out);
        if (chosen->hang_up || cmd.verb == "LOGOUT")
            conn.close();
    }

    // ---- stateful ----

    struct session_state
    {
        bool authenticated = false;
        std::optional<std::string> selected;
    };

    fixture_mailbox* find_folder(const std::string& name)
    {
        for (auto& box : folders)
            if (box.folder == name || (upper(name) == "INBOX" && upper(box.folder) == "INBOX"))
                return &box;
        return nullptr;
    }

    static std::string arg_string(const received_command& cmd, std::size_t index)
    {
        if (index >= cmd.args.size() || cmd.args[index].type == token::kind::list)
            bad_syntax("missing argument");
        return cmd.args[index].text;
    }

    void handle_stateful(connection& conn, const received_command& cmd, session_state& state)
    {
        const auto& verb = cmd.verb;
        auto reply = [&](const std::string& untagged, const std::string& completion) {
            conn.write_all(untagged + cmd.tag + " " + completion + "\r\n");
        };

        if (verb == "CAPABILITY")
            return reply("* " + capability_line() + "\r\n", "OK CAPABILITY completed");
        if (verb == "NOOP")
            return reply("", "OK NOOP completed");
        if (verb == "LOGOUT")
        {
            reply("* BYE logging out\r\n", "OK LOGOUT completed");
            conn.close();
            return;
        }
        if (verb == "LOGIN")
        {
            if (state.authenticated)
                return reply("", "BAD already authenticated");
            auto user = arg_string(cmd, 0);
            auto pass = arg_string(cmd, 1);
            if ((options.username && *options.username != user) || (options.password && *options.password != pass))
                return reply("", "NO [AUTHENTICATIONFAILED] Invalid credentials");
            state.authenticated = true;
            return reply("", "OK [" + capability_line() + "] LOGIN completed");
        }
        if (verb == "AUTHENTICATE")
        {
            if (state.authenticated)
                return reply("", "BAD already authenticated");
            if (upper(arg_string(cmd, 0)) != "XOAUTH2")
                return reply("", "NO unsupported mechanism");
            std::string initial;
            if (cmd.args.size() > 1)
                initial = arg_string(cmd, 1);
            else
            {
                conn.write_all("+ \r\n");
                initial = read_line(conn);
                while (!initial.empty() && (initial.back() == '\n' || initial.back() == '\r'))
                    initial.pop_back();
            }
            std::string decoded;
            try
            {
                decoded = decode_base64(initial);
            }
            catch (const error&)
            {
                return reply("", "BAD invalid SASL response");
            }
            auto user_at = decoded.find("user=");
            auto auth_at = decoded.find("\x01" "auth=Bearer ");
            auto end = decoded.find("\x01\x01");
            if (user_at != 0 || auth_at == std::string::npos || end == std::string::npos || end < auth_at)
                return reply("", "BAD malformed XOAUTH2 response");
            auto user = decoded.substr(5, auth_at - 5);
            auto token_text = decoded.substr(auth_at + 13, end - auth_at - 13);
            if ((options.username && *options.username != user) || (options.bearer_token && *options.bearer_token != token_text))
            {
                conn.write_all("+ " + encode_base64(R"({"status":"401","schemes":"bearer","scope":"imap"})") + "\r\n");
                read_line(conn);
                return reply("", "NO [AUTHENTICATIONFAILED] Invalid credentials");
            }
            state.authenticated = true;
            return reply("", "OK [" + capability_line() + "] AUTHENTICATE completed");
        }

        if (!state.authenticated)
            return reply("", "BAD command requires authentication");

        std::lock_guard lock(mutex);
        if (verb == "SELECT" || verb == "EXAMINE")
        {
            auto name = arg_string(cmd, 0);
            auto* box = find_folder(name);
            if (!box)
            {
                state.selected.reset();
                return reply("", "NO [NONEXISTENT] no such mailbox");
            }
            state.selected = box->folder;
            std::uint32_t next = box->messages.empty() ? 1 : box->messages.back().uid + 1;
            std::string out = "* FLAGS (\\Answered \\Flagged \\Deleted \\Seen \\Draft)\r\n";
            out += "* " + std::to_string(box->messages.size()) + " EXISTS\r\n";
            out += "* 0 RECENT\r\n";
            out += "* OK [UIDVALIDITY 1] UIDs valid\r\n";
            out += "* OK [UIDNEXT " + std::to_string(next) + "] predicted next UID\r\n";
            return reply(out, verb == "SELECT" ? "OK [READ-WRITE] SELECT completed" : "OK [READ-ONLY] EXAMINE completed");
        }
        if (verb == "LIST")
        {
            auto reference = arg_string(cmd, 0);
            auto pattern = reference + arg_string(cmd, 1);
            std::string out;
            for (const auto& box : folders)
                if (glob_match(pattern, box.folder))
                    out += "* LIST (\\HasNoChildren) \"/\" " + imap_string(box.folder) + "\r\n";
            return reply(out, "OK LIST completed");
        }
        if (verb == "CREATE")
        {
            auto name = arg_string(cmd, 0);
            if (find_folder(name))
                return reply("", "NO [ALREADYEXISTS] mailbox exists");
            folders.push_back({name, {}});
            return reply("", "OK CREATE completed");
        }
        if (verb == "RENAME")
        {
            auto from = arg_string(cmd, 0);
            auto to = arg_string(cmd, 1);
            auto* box = find_folder(from);
            if (!box)
                return reply("", "NO [NONEXISTENT] no such mailbox");
            if (find_folder(to))
                return reply("", "NO [ALREADYEXISTS] target exists");
            if (state.selected == box->folder)
                state.selected = to;
            box->folder = to;
            return reply("", "OK RENAME completed");
        }
        if (verb == "DELETE")
        {
            auto name = arg_string(cmd, 0);
            auto it = std::find_if(folders.begin(), folders.end(), [&](const fixture_mailbox& box) { return box.folder == name; });
            if (it == folders.end())
                return reply("", "NO [NONEXISTENT] no such mailbox");
            if (state.selected == it->folder)
                state.selected.reset();
            folders.erase(it);
            return reply("", "OK DELETE completed");
        }

        bool by_uid = verb.rfind("UID ", 0) == 0;
        auto base = by_uid ? verb.substr(4) : verb;
        if (base == "SEARCH" || base == "FETCH")
        {
            if (!state.selected)
                return reply("", "BAD no mailbox selected");
            auto* box = find_folder(*state.selected);
            if (!box)
                return reply("", "NO mailbox vanished");
            if (base == "SEARCH")
                return reply(search(*box, cmd, by_uid), "OK SEARCH completed");
            return reply(fetch(*box, cmd, by_uid), "OK FETCH completed");
        }
        return reply("", "BAD unsupported command");
    }

    static bool glob_match(std::string_view pattern, std::string_view name)
    {
        if (pattern.empty())
            return name.empty();
        if (pattern.front() == '*')
        {
            for (std::size_t i = 0; i <= name.size(); ++i)
                if (glob_match(pattern.substr(1), name.substr(i)))
                    return true;
            return false;
        }
        if (pattern.front() == '%')
        {
            for (std::size_t i = 0; i <= name.size(); ++i)
            {
                if (glob_match(pattern.substr(1), name.substr(i)))
                    return true;
                if (i < name.size() && name[i] == '/')
                    return false;
            }
            return false;
        }
        return !name.empty() && pattern.front() == name.front() && glob_match(pattern.substr(1), name.substr(1));
    }

    // SEARCH

    using predicate = std::function<bool(const message_view&)>;

    static bool has_flag(const fixture_message& message, std::string_view flag)
    {
        return std::any_of(message.flags.begin(), message.flags.end(),
                           [&](const std::string& f) { return upper(f) == upper(flag); });
    }

    predicate parse_key(const std::vector<token>& keys, std::size_t& i, std::uint32_t largest_uid,
                        std::uint32_t count) const
    {
        if (i >= keys.size())
            bad_syntax("missing search key");
        const auto& key = keys[i++];
        if (key.type == token::kind::list)
        {
            std::vector<predicate> inner;
            std::size_t j = 0;
            while (j < key.items.size())
                inner.push_back(parse_key(key.items, j, largest_uid, count));
            if (inner.empty())
                bad_syntax("empty search key list");
            return [inner](const message_view& m) {
                return std::all_of(inner.begin(), inner.end(), [&](const predicate& p) { return p(m); });
            };
        }
        if (key.type != token::kind::atom)
            bad_syntax("search key must be an atom");
        auto name = upper(key.text);
        auto next_text = [&]() -> std::string {
            if (i >= keys.size() || keys[i].type == token::kind::list)
                bad_syntax(name + " needs an argument");
            return keys[i++].text;
        };
        auto next_number = [&]() -> std::uint64_t {
            auto text = next_text();
            std::uint64_t n = 0;
            auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
            if (ec != std::errc() || ptr != text.data() + text.size())
                bad_syntax(name + " needs a number");
            return n;
        };
        auto next_day = [&]() -> day_stamp {
            auto day = parse_day(next_text());
            if (!day)
                bad_syntax(name + " needs a date");
            return *day;
        };
        auto internal_day = [](const message_view& m) { return parse_day(m.message->internal_date).value_or(day_stamp{}); };
        auto field_match = [](const std::string& field, const std::string& needle) {
            return [field, needle](const message_view& m) {
                for (const auto& [fname, value] : m.fields)
                    if (fname == field && contains_nocase(value, needle))
                        return true;
                return false;
            };
        };

        if (name == "ALL")
            return [](const message_view&) { return true; };
        static const std::map<std::string, std::pair<std::string, bool>> flag_keys = {
            {"ANSWERED", {"\\Answered", true}}, {"UNANSWERED", {"\\Answered", false}},
            {"DELETED", {"\\Deleted", true}},   {"UNDELETED", {"\\Deleted", false}},
            {"DRAFT", {"\\Draft", true}},       {"UNDRAFT", {"\\Draft", false}},
            {"FLAGGED", {"\\Flagged", true}},   {"UNFLAGGED", {"\\Flagged", false}},
            {"SEEN", {"\\Seen", true}},         {"UNSEEN", {"\\Seen", false}},
            {"RECENT", {"\\Recent", true}},     {"OLD", {"\\Recent", false}},
        };
        if (auto it = flag_keys.find(name); it != flag_keys.end())
        {
            auto [flag, wanted] = it->second;
            return [flag, wanted](const message_view& m) { return has_flag(*m.message, flag) == wanted; };
        }
        if (name == "NEW")
            return [](const message_view& m) { return has_flag(*m.message, "\\Recent") && !has_flag(*m.message, "\\Seen"); };
        if (name == "FROM" || name == "TO" || name == "CC" || name == "BCC" || name == "SUBJECT")
            return field_match(lower(name), next_text());
        if (name == "HEADER")
        {
            auto field = lower(next_text());
            return field_match(field, next_text());
        }
        if (name == "BODY")
        {
            auto needle = next_text();
            return [needle](const message_view& m) { return contains_nocase(m.body, needle); };
        }
        if (name == "TEXT")
        {
            auto needle = next_text();
            return [needle](const message_view& m) { return contains_nocase(m.message->raw, needle); };
        }
        if (name == "SINCE")
        {
            auto day = next_day();
            return [day, internal_day](const message_view& m) { return internal_day(m) >= day; };
        }
        if (name == "BEFORE")
        {
            auto day = next_day();
            return [day, internal_day](const message_view& m) { return internal_day(m) < day; };
        }
        if (name == "ON")
        {
            auto day = next_day();
            return [day, internal_day](const message_view& m) { return internal_day(m) == day; };
        }
        if (name == "LARGER")
        {
            auto n = next_number();
            return [n](const message_view& m) { return m.message->raw.size() > n; };
        }
        if (name == "SMALLER")
        {
            auto n = next_number();
            return [n](const message_view& m) { return m.message->raw.size() < n; };
        }
        if ((name == "YOUNGER" || name == "OLDER") && options.within)
        {
            auto n = static_cast<std::int64_t>(next_number());
            auto now = options.now.value_or(std::chrono::duration_cast<std::chrono::seconds>(
                                                std::chrono::system_clock::now().time_since_epoch())
                                                .count());
            bool younger = name == "YOUNGER";
            return [n, now, younger](const message_view& m) {
                auto stamp = parse_internal_date(m.message->internal_date);
                if (!stamp)
                    return false;
                return younger ? now - *stamp <= n : now - *stamp >= n;
            };
        }
        if (name == "NOT")
        {
            auto inner = parse_key(keys, i, largest_uid, count);
            return [inner](const message_view& m) { return !inner(m); };
        }
        if (name == "OR")
        {
            auto left = parse_key(keys, i, largest_uid, count);
            auto right = parse_key(keys, i, largest_uid, count);
            return [left, right](const message_view& m) { return left(m) || right(m); };
        }
        if (name == "UID")
        {
            auto set = next_text();
            in_sequence_set(set, 1, largest_uid);
            return [set, largest_uid](const message_view& m) { return in_sequence_set(set, m.message->uid, largest_uid); };
        }
        if (is_sequence_set(name))
        {
            in_sequence_set(name, 1, count);
            return [name, count](const message_view& m) { return in_sequence_set(name, m.sequence, count); };
        }
        bad_syntax("unsupported search key " + name);
    }

    std::string search(const fixture_mailbox& box, const received_command& cmd, bool by_uid) const
    {
        std::size_t i = 0;
        if (!cmd.args.empty() && cmd.args[0].type == token::kind::atom && upper(cmd.args[0].text) == "CHARSET")
            i = 2;
        std::uint32_t largest = box.messages.empty() ? 0 : box.messages.back().uid;
        auto count = static_cast<std::uint32_t>(box.messages.size());
        std::vector<predicate> keys;
        while (i < cmd.args.size())
            keys.push_back(parse_key(cmd.args, i, largest, count));
        if (keys.empty())
            bad_syntax("SEARCH needs a key");
        std::string out = "* SEARCH";
        for (std::size_t k = 0; k < box.messages.size(); ++k)
        {
            auto view = view_of(box.messages[k], static_cast<std::uint32_t>(k + 1));
            if (std::all_of(keys.begin(), keys.end(), [&](const predicate& p) { return p(view); }))
                out += " " + std::to_string(by_uid ? box.messages[k].uid : k + 1);
        }
        return out + "\r\n";
    }

    // FETCH

    static std::string section_bytes(const message_view& view, const std::string& section, bool& found)
    {
        found = true;
        const auto& raw = view.message->raw;
        auto key = upper(section);
        if (key.empty())
            return raw;
        if (key == "HEADER")
            return std::string(view.header_block);
        if (key == "TEXT")
            return std::string(view.body);
        if (key.rfind("HEADER.FIELDS", 0) == 0)
        {
            bool negate = key.rfind("HEADER.FIELDS.NOT", 0) == 0;
            auto open = section.find('(');
            auto close = section.rfind(')');
            if (open == std::string::npos || close == std::string::npos || close < open)
                bad_syntax("bad header field list");
            std::vector<std::string> wanted;
            for (const auto& t : tokenize(section.substr(open + 1, close - open - 1)))
                wanted.push_back(lower(t.text));
            std::string out;
            for (const auto& [name, lines] : view.raw_fields)
                if ((std::find(wanted.begin(), wanted.end(), name) != wanted.end()) != negate)
                    out += lines;
            return out + "\r\n";
        }

        // numeric part path, optionally followed by HEADER, TEXT or MIME
        auto root = parse_mime(raw);
        const mime_entity* current = &root;
        std::string_view rest = key;
        bool at_root = true;
        while (!rest.empty() && std::isdigit(static_cast<unsigned char>(rest.front())))
        {
            auto dot = rest.find('.');
            auto number_text = rest.substr(0, dot);
            std::size_t k = 0;
            std::from_chars(number_text.data(), number_text.data() + number_text.size(), k);
            if (current->is_multipart())
            {
                if (k == 0 || k > current->children.size())
                {
                    found = false;
                    return {};
                }
                current = &current->children[k - 1];
            }
            else if (!(at_root && k == 1))
            {
                found = false;
                return {};
            }
            at_root = false;
            rest = dot == std::string_view::npos ? std::string_view{} : rest.substr(dot + 1);
        }
        if (rest == "MIME" || rest == "HEADER")
        {
            std::string out;
            for (const auto& field : current->headers)
                out += field.name + ": " + field.value + "\r\n";
            return out + "\r\n";
        }
        if (!rest.empty() && rest != "TEXT")
            bad_syntax("unsupported section " + section);
        if (current->is_multipart())
        {
            auto serialized = serialize_mime(*current);
            auto split = serialized.find("\r\n\r\n");
            return split == std::string::npos ? serialized : serialized.substr(split + 4);
        }
        return current->body;
    }

    std::string fetch(fixture_mailbox& box, const received_command& cmd, bool by_uid) const
    {
        if (cmd.args.size() != 2 || cmd.args[0].type != token::kind::atom)
            bad_syntax("FETCH needs a sequence set and items");
        const auto& set = cmd.args[0].text;
        std::vector<token> items;
        if (cmd.args[1].type == token::kind::list)
            items = cmd.args[1].items;
        else
        {
            auto macro = upper(cmd.args[1].text);
            auto atoms = [](std::initializer_list<const char*> names) {
                std::vector<token> out;
                for (const auto* n : names)
                    out.push_back({token::kind::atom, n, {}});
                return out;
            };
            if (macro == "ALL")
                items = atoms({"FLAGS", "INTERNALDATE", "RFC822.SIZE", "ENVELOPE"});
            else if (macro == "FAST")
                items = atoms({"FLAGS", "INTERNALDATE", "RFC822.SIZE"});
            else if (macro == "FULL")
                items = atoms({"FLAGS", "INTERNALDATE", "RFC822.SIZE", "ENVELOPE", "BODYSTRUCTURE"});
            else
                items = {cmd.args[1]};
        }
        if (items.empty())
            bad_syntax("empty FETCH item list");

        std::uint32_t largest = box.messages.empty() ? 0 : box.messages.back().uid;
        auto count = static_cast<std::uint32_t>(box.messages.size());
        std::vector<std::string> lines;
        for (std::size_t k = 0; k < box.messages.size(); ++k)
        {
            auto& message = box.messages[k];
            auto sequence = static_cast<std::uint32_t>(k + 1);
            if (!(by_uid ? in_sequence_set(set, message.uid, largest) : in_sequence_set(set, sequence, count)))
                continue;
            auto view = view_of(message, sequence);
            std::vector<std::string> parts;
            bool uid_sent = false;
            bool flags_sent = false;
            bool mark_seen = false;
            if (by_uid)
            {
                parts.push_back("UID " + std::to_string(message.uid));
                uid_sent = true;
            }
            for (const auto& item : items)
            {
                if (item.type != token::kind::atom)
                    bad_syntax("FETCH item must be an atom");
                auto bracket = item.text.find('[');
                auto name = upper(item.text.substr(0, bracket));
                if (bracket != std::string::npos)
                {
                    if (item.text.back() != ']')
                        bad_syntax("partial fetches are not supported");
                    if (name != "BODY" && name != "BODY.PEEK")
                        bad_syntax("unsupported FETCH item " + item.text);
                    auto section = item.text.substr(bracket + 1, item.text.size() - bracket - 2);
                    bool found = true;
                    auto bytes = section_bytes(view, section, found);
                    parts.push_back("BODY[" + section + "] " + (found ? literal(bytes) : std::string("NIL")));
                    mark_seen = mark_seen || name == "BODY";
                    continue;
                }
                if (name == "UID")
                {
                    if (!uid_sent)
                        parts.push_back("UID " + std::to_string(message.uid));
                    uid_sent = true;
                }
                else if (name == "FLAGS")
                {
                    parts.push_back("FLAGS " + flag_text(message));
                    flags_sent = true;
                }
                else if (name == "INTERNALDATE")
                    parts.push_back("INTERNALDATE " + imap_string(message.internal_date));
                else if (name == "RFC822.SIZE")
                    parts.push_back("RFC822.SIZE " + std::to_string(message.raw.size()));
                else if (name == "ENVELOPE")
                    parts.push_back("ENVELOPE " + envelope_of(parse_mime(message.raw)));
                else if (name == "BODYSTRUCTURE")
                    parts.push_back("BODYSTRUCTURE " + bodystructure_of(parse_mime(message.raw)));
                else if (name == "RFC822")
                {
                    parts.push_back("RFC822 " + literal(message.raw));
                    mark_seen = true;
                }
                else if (name == "RFC822.HEADER")
                    parts.push_back("RFC822.HEADER " + literal(view.header_block));
                else if (name == "RFC822.TEXT")
                {
                    parts.push_back("RFC822.TEXT " + literal(view.body));
                    mark_seen = true;
                }
                else
                    bad_syntax("unsupported FETCH item " + item.text);
            }
            if (mark_seen && !has_flag(message, "\\Seen"))
            {
                message.flags.push_back("\\Seen");
                if (!flags_sent)
                    parts.push_back("FLAGS " + flag_text(message));
            }
            std::string line = "* " + std::to_string(sequence) + " FETCH (";
            for (std::size_t p = 0; p < parts.size(); ++p)
                line += (p ? " " : "") + parts[p];
            lines.push_back(line + ")\r\n");
        }
        if (options.shuffle_fetch)
        {
            std::mt19937 rng(options.shuffle_seed);
            std::shuffle(lines.begin(), lines.end(), rng);
        }
        std::string out;
        for (const auto& line : lines)
            out += line;
        return out;
    }

    static std::string flag_text(const fixture_message& message)
    {
        std::string out = "(";
        for (std::size_t i = 0; i < message.flags.size(); ++i)
            out += (i ? " " : "") + message.flags[i];
        return out + ")";
    }

    // TLS

    void accept_loop()
    {
        while (!stopping)
        {
            pollfd pfd{listen_fd, POLLIN, 0};
            if (::poll(&pfd, 1, 100) <= 0)
                continue;
            int fd = ::accept4(listen_fd, nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC);
            if (fd < 0)
                continue;
            spawn([this, fd] {
                auto stream = std::make_unique<detail::tls_stream>(fd, identity().context.get(),
                                                                   detail::tls_stream::role::server, std::string(),
                                                                   byte_stream::clock::now() + 5s);
                serve(connection(std::move(stream), 100ms));
            });
        }
    }
};

server::server(std::unique_ptr<impl> state) : impl_(std::move(state))
{
}

server::~server()
{
    stop();
}

std::shared_ptr<server> server::start_scripted(std::vector<script_step> steps, server_options options)
{
    auto state = std::make_unique<impl>();
    state->scripted = true;
    state->options = std::move(options);
    state->consumed.assign(steps.size(), false);
    state->steps = std::move(steps);
    return std::shared_ptr<server>(new server(std::move(state)));
}

std::shared_ptr<server> server::start_stateful(std::vector<fixture_mailbox> fixtures, server_options options)
{
    auto state = std::make_unique<impl>();
    state->scripted = false;
    state->options = std::move(options);
    state->folders = std::move(fixtures);
    return std::shared_ptr<server>(new server(std::move(state)));
}

connector server::memory_connector()
{
    return [state = impl_.get()](const endpoint&, std::chrono::milliseconds timeout) {
        auto [client_end, server_end] = make_memory_pipe();
        auto shared_end = std::make_shared<std::unique_ptr<byte_stream>>(std::move(server_end));
        state->spawn([state, shared_end] { state->serve(connection(std::move(*shared_end), 100ms)); });
        return connection(std::move(client_end), timeout);
    };
}

std::uint16_t server::listen_tls(std::uint16_t port)
{
    identity();
    if (impl_->listen_fd >= 0)
        throw error(errc::invalid_argument, "mock server is already listening");
    int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    int yes = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 16) != 0)
    {
        ::close(fd);
        throw error(errc::io_error, "cannot listen on 127.0.0.1:" + std::to_string(port));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    impl_->listen_fd = fd;
    impl_->acceptor = std::thread([state = impl_.get()] { state->accept_loop(); });
    return ntohs(addr.sin_port);
}

const std::string& server::certificate_pem()
{
    return identity().pem;
}

std::vector<std::string> server::command_log() const
{
    std::lock_guard lock(impl_->mutex);
    return impl_->log;
}

std::vector<std::string> server::unexpected_commands() const
{
    std::lock_guard lock(impl_->mutex);
    return impl_->unexpected;
}

std::size_t server::remaining_steps() const
{
    std::lock_guard lock(impl_->mutex);
    return static_cast<std::size_t>(std::count(impl_->consumed.begin(), impl_->consumed.end(), false));
}

std::vector<std::string> server::folders() const
{
    std::lock_guard lock(impl_->mutex);
    std::vector<std::string> names;
    for (const auto& box : impl_->folders)
        names.push_back(box.folder);
    return names;
}

bool server::wait_idle(std::chrono::milliseconds timeout)
{
    std::unique_lock lock(impl_->mutex);
    return impl_->idle_cv.wait_for(lock, timeout, [&] { return impl_->active == 0; });
}

void server::stop()
{
    impl_->stopping = true;
    if (impl_->acceptor.joinable())
        impl_->acceptor.join();
    if (impl_->listen_fd >= 0)
    {
        ::close(impl_->listen_fd);
        impl_->listen_fd = -1;
    }
    std::vector<std::thread> threads;
    {
        std::lock_guard lock(impl_->threads_mutex);
        threads.swap(impl_->threads);
    }
    for (auto& t : threads)
        if (t.joinable())
            t.join();
}

} // namespace mailpost::mock
