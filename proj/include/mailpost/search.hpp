#pragma once

#include <mailpost/protocol.hpp>
#include <mailpost/session.hpp>

#include <compare>
#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace mailpost
{

/// A calendar date as used by SEARCH keys, rendered "DD-Mon-YYYY".
struct imap_date
{
    int day = 1;
    int month = 1;
    int year = 1970;

    friend auto operator<=>(const imap_date&, const imap_date&) = default;
};

/// @throw error  `invalid_argument` for an impossible calendar date.
imap_date make_date(int year, int month, int day);

/// Accepts "D-Mon-YYYY" or "DD-Mon-YYYY", month names case-insensitive.
/// @throw error  `invalid_argument`.
imap_date parse_imap_date(std::string_view text);

std::string to_string(const imap_date& date);

bool is_valid_date(int year, int month, int day);

enum class search_field
{
    from,
    to,
    cc,
    bcc,
    subject,
    body,
    text,
    header
};

enum class message_flag
{
    seen,
    answered,
    flagged,
    deleted,
    draft,
    recent
};

enum class size_relation
{
    larger,
    smaller
};

enum class within_relation
{
    younger,
    older
};

struct search_criterion;
using criterion_ptr = std::shared_ptr<const search_criterion>;

struct since_date
{
    imap_date date;
};

struct before_date
{
    imap_date date;
};

struct on_date
{
    imap_date date;
};

struct string_match
{
    search_field field = search_field::text;
    /// Only for `search_field::header`.
    std::string header_name;
    std::string expr;
};

struct flag_set
{
    message_flag flag = message_flag::seen;
    bool negated = false;
};

struct size_key
{
    size_relation relation = size_relation::larger;
    std::uint64_t octets = 1;
};

struct within
{
    within_relation relation = within_relation::younger;
    std::uint64_t seconds = 1;
};

struct all_of
{
    std::vector<search_criterion> items;
};

struct either
{
    criterion_ptr left;
    criterion_ptr right;
};

struct negation
{
    criterion_ptr inner;
};

struct search_criterion
{
    std::variant<since_date, before_date, on_date, string_match, flag_set, size_key, within, all_of, either, negation> node;
};

/// Checked constructors. Each throws `invalid_argument` for values the AST invariants forbid.
namespace criteria
{
search_criterion since(imap_date date);
search_criterion before(imap_date date);
search_criterion on(imap_date date);
search_criterion match(search_field field, std::string expr);
search_criterion header(std::string field_name, std::string expr);
search_criterion flag(message_flag flag, bool negated = false);
search_criterion size(size_relation relation, std::uint64_t octets);
search_criterion within_window(within_relation relation, std::uint64_t seconds);
search_criterion all(std::vector<search_criterion> items);
search_criterion any(search_criterion left, search_criterion right);
search_criterion negate(search_criterion inner);
} // namespace criteria

/// @throw error  `invalid_argument` describing the first violated invariant.
void validate(const search_criterion& criterion);

bool uses_within(const search_criterion& criterion);

/// Search keys as command arguments.
std::vector<command_arg> criterion_args(const search_criterion& criterion);

/// Wire form of the search keys, e.g. `SINCE 01-Nov-2020 BEFORE 01-Dec-2020`.
std::string render_criterion(const search_criterion& criterion);

std::string_view to_string(search_field field);
std::string_view to_string(message_flag flag);

/**
Runs `UID SEARCH` (or `SEARCH` when the session uses sequence numbers) in the selected folder.

@throw error  `state_error` unless Selected; `capability_missing` when WITHIN keys are used and the server lacks
              the extension; `search_refused` on a NO completion; `invalid_argument` for an invalid AST.
**/
std::vector<message_id> search(session& s, const search_criterion& criterion);

/// @throw error  `invalid_range` unless since < before.
std::vector<message_id> search_period(session& s, imap_date since, imap_date before);
std::vector<message_id> search_string(session& s, const std::string& expr, search_field where);
std::vector<message_id> search_flag(session& s, message_flag flag, bool negated = false);
std::vector<message_id> search_size(session& s, size_relation relation, std::uint64_t octets);
std::vector<message_id> search_within(session& s, within_relation relation, std::uint64_t seconds);

} // namespace mailpost
