#include <doctest.h>

#include "oracles.hpp"
#include "scenarios.hpp"

#include <mailpost/error.hpp>
#include <mailpost/mockserver.hpp>
#include <mailpost/search.hpp>
#include <mailpost/session.hpp>

#include <random>

using namespace mailpost;
using namespace mailpost::criteria;

namespace
{

errc code_of(const std::function<void()>& f)
{
    try
    {
        f();
    }
    catch (const error& e)
    {
        return e.code();
    }
    FAIL("no error thrown");
    return errc::io_error;
}

std::vector<std::uint32_t> values(const std::vector<message_id>& ids)
{
    std::vector<std::uint32_t> out;
    for (auto id : ids)
        out.push_back(id.value);
    return out;
}

session scripted_session(mock::server& srv, bool use_uid = true)
{
    auto config = scenario::mock_config();
    config.use_uid = use_uid;
    auto s = session::configure_imap(config, srv.memory_connector());
    s.select_folder("INBOX");
    return s;
}

std::string search_keys(const std::string& logged)
{
    auto cmd = mock::parse_command(logged);
    auto pos = logged.find(cmd.verb);
    auto keys = logged.substr(pos + cmd.verb.size() + 1);
    while (!keys.empty() && (keys.back() == '\n' || keys.back() == '\r'))
        keys.pop_back();
    return keys;
}

const imap_date nov1 = make_date(2020, 11, 1);
const imap_date dec1 = make_date(2020, 12, 1);

} // namespace

TEST_CASE("dates")
{
    CHECK(to_string(nov1) == "01-Nov-2020");
    CHECK(to_string(make_date(1999, 2, 28)) == "28-Feb-1999");
    CHECK(parse_imap_date("1-nov-2020") == nov1);
    CHECK(parse_imap_date("01-NOV-2020") == nov1);
    CHECK(is_valid_date(2000, 2, 29));
    CHECK_FALSE(is_valid_date(1900, 2, 29));
    CHECK(code_of([] { make_date(2020, 2, 31); }) == errc::invalid_argument);
    CHECK(code_of([] { make_date(2021, 2, 29); }) == errc::invalid_argument);
    CHECK(code_of([] { make_date(2020, 13, 1); }) == errc::invalid_argument);
    CHECK(code_of([] { parse_imap_date("01-Foo-2020"); }) == errc::invalid_argument);
    CHECK(code_of([] { parse_imap_date("31-Apr-2020"); }) == errc::invalid_argument);
    CHECK(code_of([] { parse_imap_date("2020-11-01"); }) == errc::invalid_argument);
}

TEST_CASE("every date from 1990 to 2100 renders and parses back")
{
    static const int month_days[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    int checked = 0;
    for (int y = 1990; y <= 2100; ++y)
        for (int m = 1; m <= 12; ++m)
        {
            bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
            int last = month_days[m - 1] + (m == 2 && leap ? 1 : 0);
            for (int d = 1; d <= last; ++d)
            {
                auto date = make_date(y, m, d);
                auto text = to_string(date);
                if (text.size() != 11 || parse_imap_date(text) != date)
                    FAIL_CHECK(text);
                ++checked;
            }
            CHECK_FALSE(is_valid_date(y, m, last + 1));
        }
    CHECK(checked == 40542);
}

TEST_CASE("render_criterion")
{
    CHECK(render_criterion(all({since(nov1), before(dec1)})) == "SINCE 01-Nov-2020 BEFORE 01-Dec-2020");
    CHECK(render_criterion(match(search_field::from, "@ksu.edu")) == "FROM \"@ksu.edu\"");
    CHECK(render_criterion(negate(flag(message_flag::seen))) == "NOT SEEN");
    CHECK(render_criterion(any(size(size_relation::larger, 512000), within_window(within_relation::younger, 3600))) ==
          "OR LARGER 512000 YOUNGER 3600");
    CHECK(render_criterion(flag(message_flag::seen, true)) == "NOT SEEN");
    CHECK(render_criterion(on(make_date(2020, 11, 5))) == "ON 05-Nov-2020");
    CHECK(render_criterion(header("X-Mailer", "mutt")) == "HEADER X-Mailer \"mutt\"");
    CHECK(render_criterion(within_window(within_relation::older, 86400)) == "OLDER 86400");
    CHECK(render_criterion(match(search_field::subject, "say \"hi\"")) == "SUBJECT {8}\r\nsay \"hi\"");
    CHECK(render_criterion(all({flag(message_flag::flagged), all({flag(message_flag::draft), flag(message_flag::recent)})})) ==
          "FLAGGED DRAFT RECENT");
    CHECK(render_criterion(negate(all({since(nov1), before(dec1)}))) == "NOT (SINCE 01-Nov-2020 BEFORE 01-Dec-2020)");
    CHECK(render_criterion(any(all({flag(message_flag::seen), flag(message_flag::draft)}), flag(message_flag::recent))) ==
          "OR (SEEN DRAFT) RECENT");
    CHECK(render_criterion(any(any(flag(message_flag::answered), flag(message_flag::deleted)), negate(all({since(nov1)})))) ==
          "OR OR ANSWERED DELETED NOT SINCE 01-Nov-2020");
}

TEST_CASE("invariants")
{
    CHECK(code_of([] { all({}); }) == errc::invalid_argument);
    CHECK(code_of([] { within_window(within_relation::younger, 0); }) == errc::invalid_argument);
    CHECK(code_of([] { size(size_relation::larger, 0); }) == errc::invalid_argument);
    CHECK(code_of([] { match(search_field::text, ""); }) == errc::invalid_argument);
    CHECK(code_of([] { header("", "x"); }) == errc::invalid_argument);
    CHECK(code_of([] { header("Bad Name", "x"); }) == errc::invalid_argument);

    search_criterion broken{either{nullptr, nullptr}};
    CHECK(code_of([&] { validate(broken); }) == errc::invalid_argument);
    search_criterion empty_and{all_of{}};
    CHECK(code_of([&] { validate(empty_and); }) == errc::invalid_argument);
    search_criterion zero_within{within{within_relation::older, 0}};
    CHECK(code_of([&] { validate(zero_within); }) == errc::invalid_argument);
    CHECK_NOTHROW(validate(any(flag(message_flag::seen), since(nov1))));

    CHECK(uses_within(negate(all({since(nov1), within_window(within_relation::younger, 5)}))));
    CHECK_FALSE(uses_within(any(since(nov1), before(dec1))));
}

TEST_CASE("random trees render to grammatical commands")
{
    std::mt19937_64 rng(404);
    std::vector<std::string> words = {"invoice", "@ksu.edu", "a b", "quote\"d", "back\\slash", "(paren)", "caf\xc3\xa9"};
    for (int i = 0; i < 1000; ++i)
    {
        auto c = oracle::random_criterion(rng, 4, words);
        auto wire = serialize_command({1}, "UID SEARCH", criterion_args(c));
        std::string why;
        if (!oracle::command_accepted(wire, &why))
            FAIL_CHECK(wire << " : " << why);
        auto rendered = render_criterion(c);
        if (wire.find(rendered) == std::string::npos && rendered.find('{') == std::string::npos)
            FAIL_CHECK(rendered);
    }
}

TEST_CASE("search against scripted replies")
{
    SUBCASE("string search returns server order")
    {
        auto srv = mock::server::start_scripted({
            mock::step("LOGIN"),
            mock::step("SELECT", {"* 18 EXISTS"}),
            mock::step("UID SEARCH", {"* SEARCH 60 145 147 159 332 333 336 338 341 428"}),
            mock::step("UID SEARCH", {"* SEARCH 338 12 60"}),
            mock::step("UID SEARCH", {"* SEARCH"}),
        });
        auto s = scripted_session(*srv);
        CHECK(values(search_string(s, "@ksu.edu", search_field::from)) ==
              std::vector<std::uint32_t>{60, 145, 147, 159, 332, 333, 336, 338, 341, 428});
        CHECK(values(search_string(s, "invoice", search_field::subject)) == std::vector<std::uint32_t>{338, 12, 60});
        CHECK(search(s, match(search_field::body, "nothing-matches")).empty());
        auto log = srv->command_log();
        CHECK(search_keys(log[2]) == "FROM \"@ksu.edu\"");
        CHECK(search_keys(log[3]) == "SUBJECT \"invoice\"");
    }
    SUBCASE("NO completion")
    {
        auto srv = mock::server::start_scripted(
            {mock::step("LOGIN"), mock::step("SELECT"), mock::step("UID SEARCH", {}, "NO", "search too expensive")});
        auto s = scripted_session(*srv);
        CHECK(code_of([&] { search_flag(s, message_flag::seen); }) == errc::search_refused);
        CHECK(s.state().phase == session_phase::selected);
    }
    SUBCASE("empty expression")
    {
        auto srv = mock::server::start_scripted({mock::step("LOGIN"), mock::step("SELECT")});
        auto s = scripted_session(*srv);
        CHECK(code_of([&] { search_string(s, "", search_field::text); }) == errc::invalid_argument);
        CHECK(code_of([&] { search_size(s, size_relation::larger, 0); }) == errc::invalid_argument);
        CHECK(srv->command_log().size() == 2);
    }
    SUBCASE("ids carry the session's kind")
    {
        auto srv = mock::server::start_scripted(
            {mock::step("LOGIN"), mock::step("SELECT"), mock::step("SEARCH", {"* SEARCH 3 4"})});
        auto s = scripted_session(*srv, false);
        auto ids = search_flag(s, message_flag::flagged);
        REQUIRE(ids.size() == 2);
        CHECK(ids[0].kind == id_kind::sequence_number);
        CHECK(srv->unexpected_commands().empty());
    }
}

TEST_CASE("WITHIN precheck")
{
    SUBCASE("missing capability fails before any search")
    {
        auto srv = mock::server::start_scripted({
            mock::step("LOGIN"),
            mock::step("SELECT"),
            mock::step("CAPABILITY", {"* CAPABILITY IMAP4rev1 UIDPLUS"}),
        });
        auto s = scripted_session(*srv);
        CHECK(code_of([&] { search_within(s, within_relation::younger, 3600); }) == errc::capability_missing);
        CHECK(code_of([&] { search(s, any(flag(message_flag::seen), within_window(within_relation::older, 60))); }) ==
              errc::capability_missing);
        for (const auto& line : srv->command_log())
            CHECK(line.find("SEARCH") == std::string::npos);
    }
    SUBCASE("capable server")
    {
        auto srv = mock::server::start_scripted({
            mock::step("LOGIN"),
            mock::step("SELECT"),
            mock::step("CAPABILITY", {"* CAPABILITY IMAP4rev1 WITHIN"}),
            mock::step("UID SEARCH", {"* SEARCH 400 428"}),
        });
        auto s = scripted_session(*srv);
        CHECK(values(search_within(s, within_relation::younger, 3600)) == std::vector<std::uint32_t>{400, 428});
        CHECK(search_keys(srv->command_log().back()) == "YOUNGER 3600");
    }
}

TEST_CASE("search_period")
{
    auto srv = scenario::fixture_server();
    auto s = scenario::open_session(*srv, "Archive");
    auto sugar = search_period(s, nov1, dec1);
    auto explicit_form = search(s, all({since(nov1), before(dec1)}));
    CHECK(sugar == explicit_form);
    CHECK(!sugar.empty());
    auto log = srv->command_log();
    CHECK(search_keys(log[2]) == "SINCE 01-Nov-2020 BEFORE 01-Dec-2020");
    CHECK(search_keys(log[2]) == search_keys(log[3]));
    CHECK(code_of([&] { search_period(s, nov1, nov1); }) == errc::invalid_range);
    CHECK(code_of([&] { search_period(s, dec1, nov1); }) == errc::invalid_range);
    CHECK(srv->command_log().size() == 4);

    // brute force over the fixture
    std::vector<std::uint32_t> expected;
    for (const auto& m : scenario::folder("Archive").messages)
    {
        auto d = oracle::internal_day(m.internal_date);
        if (d >= oracle::calendar_day{2020, 11, 1} && d < oracle::calendar_day{2020, 12, 1})
            expected.push_back(m.uid);
    }
    CHECK(values(sugar) == expected);
}

TEST_CASE("convenience calls emit the same wire keys as their explicit trees")
{
    std::mt19937_64 rng(77);
    auto srv = scenario::fixture_server();
    auto s = scenario::open_session(*srv, "INBOX");
    const std::vector<std::string> words = {"report", "@ksu.edu", "Dana", "payment due", "x\"y"};
    const search_field fields[] = {search_field::from, search_field::to, search_field::cc, search_field::bcc,
                                   search_field::subject, search_field::body, search_field::text};
    const message_flag flags[] = {message_flag::seen, message_flag::answered, message_flag::flagged,
                                  message_flag::deleted, message_flag::draft, message_flag::recent};
    for (int i = 0; i < 60; ++i)
    {
        auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
        switch (i % 4)
        {
        case 0: {
            auto w = words[pick(words.size())];
            auto f = fields[pick(std::size(fields))];
            search_string(s, w, f);
            search(s, match(f, w));
            break;
        }
        case 1: {
            auto f = flags[pick(std::size(flags))];
            bool neg = pick(2) == 1;
            search_flag(s, f, neg);
            search(s, flag(f, neg));
            break;
        }
        case 2: {
            auto rel = pick(2) ? size_relation::larger : size_relation::smaller;
            std::uint64_t n = 1 + pick(100000);
            search_size(s, rel, n);
            search(s, size(rel, n));
            break;
        }
        default: {
            auto a = make_date(2020, 1 + static_cast<int>(pick(11)), 1 + static_cast<int>(pick(28)));
            auto b = make_date(a.year, a.month + 1, a.day);
            search_period(s, a, b);
            search(s, all({since(a), before(b)}));
        }
        }
    }
    auto log = srv->command_log();
    REQUIRE(log.size() == 2 + 120);
    for (std::size_t i = 2; i < log.size(); i += 2)
        CHECK(search_keys(log[i]) == search_keys(log[i + 1]));
}

TEST_CASE("UID mode decides the command prefix")
{
    std::mt19937_64 rng(9);
    std::vector<std::string> words = {"a", "b c"};
    for (bool uid : {true, false})
    {
        mock::server_options options;
        auto srv = scenario::fixture_server(options);
        auto config = scenario::mock_config();
        config.use_uid = uid;
        auto s = session::configure_imap(config, srv->memory_connector());
        s.select_folder("INBOX");
        for (int i = 0; i < 40; ++i)
        {
            auto c = oracle::random_criterion(rng, 3, words, false);
            try
            {
                search(s, c);
            }
            catch (const error& e)
            {
                // the mock refuses keys outside its subset; the prefix still went out
                CHECK(e.code() == errc::search_refused);
            }
        }
        for (const auto& line : srv->command_log())
        {
            auto verb = mock::parse_command(line).verb;
            if (verb.find("SEARCH") != std::string::npos)
                CHECK(verb == (uid ? "UID SEARCH" : "SEARCH"));
        }
    }
}

TEST_CASE("search requires a selected folder")
{
    auto srv = scenario::fixture_server();
    auto s = scenario::open_session(*srv, "");
    CHECK(code_of([&] { search_flag(s, message_flag::seen); }) == errc::state_error);
}

TEST_CASE("fixture search against a brute-force evaluator")
{
    auto result = scenario::search_oracle();
    INFO(result.detail);
    CHECK(result.pass);
}
