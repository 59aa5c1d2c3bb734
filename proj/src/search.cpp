#include <mailpost/search.hpp>

#include <mailpost/error.hpp>

#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>

namespace mailpost
{

namespace
{

constexpr std::array<std::string_view, 12> month_names = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                                          "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};

[[noreturn]] void invalid(const std::string& what)
{
    throw error(errc::invalid_argument, what);
}

search_criterion wrap(search_criterion value)
{
    validate(value);
    return value;
}

command_arg date_arg(const imap_date& date)
{
    return command_arg::atom(to_string(date));
}

void append_args(const search_criterion& criterion, std::vector<command_arg>& out, bool nested);

void append_args(const search_criterion& criterion, std::vector<command_arg>& out, bool nested)
{
    std::visit(
        [&](const auto& node) {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, since_date>)
            {
                out.push_back(command_arg::atom("SINCE"));
                out.push_back(date_arg(node.date));
            }
            else if constexpr (std::is_same_v<T, before_date>)
            {
                out.push_back(command_arg::atom("BEFORE"));
                out.push_back(date_arg(node.date));
            }
            else if constexpr (std::is_same_v<T, on_date>)
            {
                out.push_back(command_arg::atom("ON"));
                out.push_back(date_arg(node.date));
            }
            else if constexpr (std::is_same_v<T, string_match>)
            {
                out.push_back(command_arg::atom(std::string(to_string(node.field))));
                if (node.field == search_field::header)
                    out.push_back(command_arg::astring(node.header_name));
                out.push_back(command_arg::quoted(node.expr));
            }
            else if constexpr (std::is_same_v<T, flag_set>)
            {
                if (node.negated)
                    out.push_back(command_arg::atom("NOT"));
                out.push_back(command_arg::atom(std::string(to_string(node.flag))));
            }
            else if constexpr (std::is_same_v<T, size_key>)
            {
                out.push_back(command_arg::atom(node.relation == size_relation::larger ? "LARGER" : "SMALLER"));
                out.push_back(command_arg::atom(std::to_string(node.octets)));
            }
            else if constexpr (std::is_same_v<T, within>)
            {
                out.push_back(command_arg::atom(node.relation == within_relation::younger ? "YOUNGER" : "OLDER"));
                out.push_back(command_arg::atom(std::to_string(node.seconds)));
            }
            else if constexpr (std::is_same_v<T, all_of>)
            {
                if (nested && node.items.size() > 1)
                {
                    std::vector<command_arg> inner;
                    for (const auto& item : node.items)
                        append_args(item, inner, false);
                    out.push_back(command_arg::list(std::move(inner)));
                }
                else
                    for (const auto& item : node.items)
                        append_args(item, out, nested);
            }
            else if constexpr (std::is_same_v<T, either>)
            {
                // operands are single keys; a multi-item conjunction gets parenthesized below
                out.push_back(command_arg::atom("OR"));
                append_args(*node.left, out, true);
                append_args(*node.right, out, true);
            }
            else if constexpr (std::is_same_v<T, negation>)
            {
                out.push_back(command_arg::atom("NOT"));
                append_args(*node.inner, out, true);
            }
        },
        criterion.node);
}

bool is_header_name(std::string_view name)
{
    if (name.empty())
        return false;
    for (char c : name)
    {
        auto u = static_cast<unsigned char>(c);
        if (u <= 0x20 || u >= 0x7F || c == ':')
            return false;
    }
    return true;
}

std::vector<message_id> run_search(session& s, const std::vector<command_arg>& args)
{
    auto verb = s.ids() == id_kind::uid ? "UID SEARCH" : "SEARCH";
    auto responses = s.execute(verb, args);
    auto kind = completion_kind(responses);
    if (kind == response_kind::tagged_no)
        throw error(errc::search_refused, "SEARCH refused: " + completion_text(responses));
    if (kind != response_kind::tagged_ok)
        throw error(errc::command_failed, "SEARCH rejected: " + completion_text(responses));
    std::vector<message_id> ids;
    for (const auto& response : responses)
        if (const auto* results = std::get_if<search_results>(&response.payload))
            for (auto value : results->ids)
                ids.push_back({value, s.ids()});
    return ids;
}

} // namespace

bool is_valid_date(int year, int month, int day)
{
    if (year < 1 || year > 9999 || month < 1 || month > 12 || day < 1)
        return false;
    static constexpr std::array<int, 12> days = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    int limit = days[static_cast<std::size_t>(month - 1)] + (month == 2 && leap ? 1 : 0);
    return day <= limit;
}

imap_date make_date(int year, int month, int day)
{
    if (!is_valid_date(year, month, day))
        invalid("not a calendar date: " + std::to_string(year) + "-" + std::to_string(month) + "-" + std::to_string(day));
    return {day, month, year};
}

imap_date parse_imap_date(std::string_view text)
{
    auto fail = [&]() -> imap_date { invalid("expected a DD-Mon-YYYY date, got \"" + std::string(text) + "\""); };
    auto dash1 = text.find('-');
    auto dash2 = dash1 == std::string_view::npos ? dash1 : text.find('-', dash1 + 1);
    if (dash2 == std::string_view::npos)
        return fail();
    auto day_text = text.substr(0, dash1);
    auto month_text = text.substr(dash1 + 1, dash2 - dash1 - 1);
    auto year_text = text.substr(dash2 + 1);
    if (day_text.empty() || day_text.size() > 2 || year_text.size() != 4 || month_text.size() != 3)
        return fail();
    int day = 0;
    int year = 0;
    auto [p1, e1] = std::from_chars(day_text.data(), day_text.data() + day_text.size(), day);
    auto [p2, e2] = std::from_chars(year_text.data(), year_text.data() + year_text.size(), year);
    if (e1 != std::errc() || p1 != day_text.data() + day_text.size() || e2 != std::errc() ||
        p2 != year_text.data() + year_text.size())
        return fail();
    int month = 0;
    for (std::size_t i = 0; i < month_names.size(); ++i)
    {
        bool same = true;
        for (std::size_t k = 0; k < 3; ++k)
            same = same && std::tolower(static_cast<unsigned char>(month_text[k])) ==
                               std::tolower(static_cast<unsigned char>(month_names[i][k]));
        if (same)
            month = static_cast<int>(i) + 1;
    }
    if (month == 0)
        return fail();
    return make_date(year, month, day);
}

std::string to_string(const imap_date& date)
{
    char buffer[16];
    std::snprintf(buffer, sizeof buffer, "%02d-%s-%04d", date.day,
                  std::string(month_names.at(static_cast<std::size_t>(date.month - 1))).c_str(), date.year);
    return buffer;
}

std::string_view to_string(search_field field)
{
    switch (field)
    {
        case search_field::from:
            return "FROM";
        case search_field::to:
            return "TO";
        case search_field::cc:
            return "CC";
        case search_field::bcc:
            return "BCC";
        case search_field::subject:
            return "SUBJECT";
        case search_field::body:
            return "BODY";
        case search_field::text:
            return "TEXT";
        case search_field::header:
            return "HEADER";
    }
    return "TEXT";
}

std::string_view to_string(message_flag flag)
{
    switch (flag)
    {
        case message_flag::seen:
            return "SEEN";
        case message_flag::answered:
            return "ANSWERED";
        case message_flag::flagged:
            return "FLAGGED";
        case message_flag::deleted:
            return "DELETED";
        case message_flag::draft:
            return "DRAFT";
        case message_flag::recent:
            return "RECENT";
    }
    return "SEEN";
}

void validate(const search_criterion& criterion)
{
    std::visit(
        [](const auto& node) {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, since_date> || std::is_same_v<T, before_date> || std::is_same_v<T, on_date>)
            {
                if (!is_valid_date(node.date.year, node.date.month, node.date.day))
                    invalid("invalid date in search criterion");
            }
            else if constexpr (std::is_same_v<T, string_match>)
            {
                if (node.expr.empty())
                    invalid("search expression must not be empty");
                if (node.field == search_field::header && !is_header_name(node.header_name))
                    invalid("invalid header field name \"" + node.header_name + "\"");
            }
            else if constexpr (std::is_same_v<T, size_key>)
            {
                if (node.octets < 1)
                    invalid("size threshold must be at least 1 octet");
            }
            else if constexpr (std::is_same_v<T, within>)
            {
                if (node.seconds < 1)
                    invalid("WITHIN interval must be at least 1 second");
            }
            else if constexpr (std::is_same_v<T, all_of>)
            {
                if (node.items.empty())
                    invalid("conjunction must not be empty");
                for (const auto& item : node.items)
                    validate(item);
            }
            else if constexpr (std::is_same_v<T, either>)
            {
                if (!node.left || !node.right)
                    invalid("OR needs two operands");
                validate(*node.left);
                validate(*node.right);
            }
            else if constexpr (std::is_same_v<T, negation>)
            {
                if (!node.inner)
                    invalid("NOT needs an operand");
                validate(*node.inner);
            }
        },
        criterion.node);
}

bool uses_within(const search_criterion& criterion)
{
    return std::visit(
        [](const auto& node) -> bool {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, within>)
                return true;
            else if constexpr (std::is_same_v<T, all_of>)
            {
                for (const auto& item : node.items)
                    if (uses_within(item))
                        return true;
                return false;
            }
            else if constexpr (std::is_same_v<T, either>)
                return (node.left && uses_within(*node.left)) || (node.right && uses_within(*node.right));
            else if constexpr (std::is_same_v<T, negation>)
                return node.inner && uses_within(*node.inner);
            else
                return false;
        },
        criterion.node);
}

std::vector<command_arg> criterion_args(const search_criterion& criterion)
{
    std::vector<command_arg> args;
    append_args(criterion, args, false);
    return args;
}

std::string render_criterion(const search_criterion& criterion)
{
    return render_args(criterion_args(criterion));
}

namespace criteria
{

search_criterion since(imap_date date)
{
    return wrap({since_date{date}});
}

search_criterion before(imap_date date)
{
    return wrap({before_date{date}});
}

search_criterion on(imap_date date)
{
    return wrap({on_date{date}});
}

search_criterion match(search_field field, std::string expr)
{
    if (field == search_field::header)
        invalid("use criteria::header for header fields");
    return wrap({string_match{field, {}, std::move(expr)}});
}

search_criterion header(std::string field_name, std::string expr)
{
    return wrap({string_match{search_field::header, std::move(field_name), std::move(expr)}});
}

search_criterion flag(message_flag flag, bool negated)
{
    return wrap({flag_set{flag, negated}});
}

search_criterion size(size_relation relation, std::uint64_t octets)
{
    return wrap({size_key{relation, octets}});
}

search_criterion within_window(within_relation relation, std::uint64_t seconds)
{
    return wrap({within{relation, seconds}});
}

search_criterion all(std::vector<search_criterion> items)
{
    return wrap({all_of{std::move(items)}});
}

search_criterion any(search_criterion left, search_criterion right)
{
    return wrap({either{std::make_shared<const search_criterion>(std::move(left)),
                        std::make_shared<const search_criterion>(std::move(right))}});
}

search_criterion negate(search_criterion inner)
{
    return wrap({negation{std::make_shared<const search_criterion>(std::move(inner))}});
}

} // namespace criteria

std::vector<message_id> search(session& s, const search_criterion& criterion)
{
    s.require_phase({session_phase::selected}, "search");
    validate(criterion);
    auto args = criterion_args(criterion);
    if (uses_within(criterion) && !s.has_capability("WITHIN"))
        throw error(errc::capability_missing, "server does not advertise WITHIN");
    return run_search(s, args);
}

std::vector<message_id> search_period(session& s, imap_date since, imap_date before)
{
    if (!(since < before))
        throw error(errc::invalid_range, "search period needs since < before, got " + to_string(since) + " .. " +
                                             to_string(before));
    return search(s, criteria::all({criteria::since(since), criteria::before(before)}));
}

std::vector<message_id> search_string(session& s, const std::string& expr, search_field where)
{
    return search(s, criteria::match(where, expr));
}

std::vector<message_id> search_flag(session& s, message_flag flag, bool negated)
{
    return search(s, criteria::flag(flag, negated));
}

std::vector<message_id> search_size(session& s, size_relation relation, std::uint64_t octets)
{
    return search(s, criteria::size(relation, octets));
}

std::vector<message_id> search_within(session& s, within_relation relation, std::uint64_t seconds)
{
    return search(s, criteria::within_window(relation, seconds));
}

} // namespace mailpost
