#include <doctest.h>

#include "oracles.hpp"

#include <mailpost/error.hpp>
#include <mailpost/mockserver.hpp>
#include <mailpost/protocol.hpp>
#include <mailpost/search.hpp>

#include <chrono>
#include <random>
#include <set>

using namespace mailpost;
using namespace std::chrono_literals;

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

const std::vector<std::uint32_t> ksu_ids = {60, 145, 147, 159, 332, 333, 336, 338, 341, 428};

std::vector<std::uint32_t> values(const std::vector<message_id>& ids)
{
    std::vector<std::uint32_t> out;
    for (const auto& id : ids)
        out.push_back(id.value);
    return out;
}

void compare_tokens(const std::vector<command_arg>& args, const std::vector<mock::token>& tokens)
{
    REQUIRE(args.size() == tokens.size());
    for (std::size_t i = 0; i < args.size(); ++i)
    {
        if (args[i].type == command_arg::kind::list)
        {
            REQUIRE(tokens[i].type == mock::token::kind::list);
            compare_tokens(args[i].items, tokens[i].items);
        }
        else
            CHECK(tokens[i].text == args[i].text);
    }
}

// Random BODYSTRUCTURE text plus the part numbers a depth-first walk must produce.
std::string random_structure(std::mt19937_64& rng, int depth, const std::string& number, bool root,
                             std::vector<std::string>& expected)
{
    bool multipart = depth > 0 && std::uniform_int_distribution<int>(0, 2)(rng) != 0;
    if (!multipart)
    {
        expected.push_back(root ? "1" : number);
        if (std::uniform_int_distribution<int>(0, 1)(rng))
            return R"(("TEXT" "PLAIN" ("CHARSET" "utf-8") NIL NIL "7BIT" 42 3 NIL NIL NIL NIL))";
        return R"(("APPLICATION" "PDF" ("NAME" "a.pdf") NIL NIL "BASE64" 120 NIL ("ATTACHMENT" ("FILENAME" "a.pdf")) NIL NIL))";
    }
    expected.push_back(number);
    int n = std::uniform_int_distribution<int>(1, 3)(rng);
    std::string out = "(";
    for (int i = 1; i <= n; ++i)
        out += random_structure(rng, depth - 1, number.empty() ? std::to_string(i) : number + "." + std::to_string(i),
                                false, expected);
    out += R"( "MIXED" ("BOUNDARY" "b") NIL NIL NIL))";
    return out;
}

} // namespace

TEST_CASE("next_tag")
{
    std::uint32_t counter = 0;
    CHECK(next_tag(counter).text() == "A0001");
    CHECK(counter == 1);
    counter = 41;
    CHECK(next_tag(counter).text() == "A0042");
    counter = 9998;
    CHECK(next_tag(counter).text() == "A9999");
    CHECK(code_of([&] { next_tag(counter); }) == errc::tag_space_exhausted);
}

TEST_CASE("tags strictly increase and never repeat")
{
    std::uint32_t counter = 0;
    std::set<std::string> seen;
    std::string last;
    for (int i = 0; i < 9999; ++i)
    {
        auto t = next_tag(counter).text();
        CHECK(t > last);
        CHECK(seen.insert(t).second);
        last = t;
    }
}

TEST_CASE("serialize_command examples")
{
    CHECK(serialize_command({1}, "SELECT", {command_arg::astring("INBOX")}) == "A0001 SELECT INBOX\r\n");
    CHECK(serialize_command({2}, "SEARCH", {command_arg::atom("FROM"), command_arg::quoted("@ksu.edu")}) ==
          "A0002 SEARCH FROM \"@ksu.edu\"\r\n");
    CHECK(serialize_command({3}, "LOGIN", {command_arg::quoted("user"), command_arg::quoted("pa ss")}) ==
          "A0003 LOGIN \"user\" \"pa ss\"\r\n");
}

TEST_CASE("serialize_command quoting rules")
{
    SUBCASE("astring with specials is quoted")
    {
        CHECK(serialize_command({1}, "SELECT", {command_arg::astring("My Folder")}) == "A0001 SELECT \"My Folder\"\r\n");
        CHECK(serialize_command({1}, "SELECT", {command_arg::astring("")}) == "A0001 SELECT \"\"\r\n");
        CHECK(serialize_command({1}, "SELECT", {command_arg::astring("a\\b")}) == "A0001 SELECT \"a\\\\b\"\r\n");
    }
    SUBCASE("double quote and 8-bit become literals")
    {
        auto chunks = serialize_command_chunks({4}, "LOGIN", {command_arg::astring("u"), command_arg::quoted("p\"w")});
        REQUIRE(chunks.size() == 2);
        CHECK(chunks[0] == "A0004 LOGIN u {3}\r\n");
        CHECK(chunks[1] == "p\"w\r\n");
        CHECK(serialize_command({5}, "SELECT", {command_arg::astring("caf\xC3\xA9")}) ==
              "A0005 SELECT {5}\r\ncaf\xC3\xA9\r\n");
    }
    SUBCASE("lists")
    {
        CHECK(serialize_command({6}, "UID FETCH",
                                {command_arg::atom("1,2"),
                                 command_arg::list({command_arg::atom("UID"), command_arg::atom("FLAGS")})}) ==
              "A0006 UID FETCH 1,2 (UID FLAGS)\r\n");
    }
    SUBCASE("errors")
    {
        CHECK(code_of([] { serialize_command({1}, "SELECT", {command_arg::quoted("a\r\nb")}); }) ==
              errc::unencodable_argument);
        CHECK(code_of([] { serialize_command({1}, "SELECT", {command_arg::astring("a\nb")}); }) ==
              errc::unencodable_argument);
        CHECK(code_of([] { serialize_command({1}, "FROBNICATE", {}); }) == errc::unknown_verb);
        CHECK_NOTHROW(serialize_command({1}, "SELECT", {command_arg::literal("a\r\nb")}));
    }
}

TEST_CASE("serialized commands satisfy the grammar checker")
{
    std::string why;
    CHECK(oracle::command_accepted("A0001 SELECT INBOX\r\n", &why));
    CHECK(oracle::command_accepted("A0002 UID FETCH 1:*,7 (UID BODY.PEEK[1.2.MIME])\r\n", &why));
    CHECK(oracle::command_accepted("A0003 SEARCH OR FROM \"x\" (SEEN LARGER 5)\r\n", &why));
    CHECK_FALSE(oracle::command_accepted("A0001 SELECT\r\n"));
    CHECK_FALSE(oracle::command_accepted("A0001 SELECT a b\r\n"));
    CHECK_FALSE(oracle::command_accepted("A0001 SELECT \"unterminated\r\n"));
    CHECK_FALSE(oracle::command_accepted("A0001 SEARCH FROM\r\n"));
    CHECK_FALSE(oracle::command_accepted("A0001 UID FETCH 0 UID\r\n"));
    CHECK_FALSE(oracle::command_accepted("A0001 LOGIN {5}\r\nab\r\n"));
    CHECK_FALSE(oracle::command_accepted("A0001 NOOP"));
}

TEST_CASE("random commands render to grammatical wire text and decode back")
{
    std::mt19937_64 rng(2020);
    std::uint32_t counter = 0;
    for (int i = 0; i < 1000; ++i)
    {
        auto cmd = oracle::random_wire_command(rng);
        auto wire = serialize_command(next_tag(counter), cmd.verb, cmd.args);
        std::string why;
        INFO(wire);
        CHECK_MESSAGE(oracle::command_accepted(wire, &why), why);
        auto decoded = mock::parse_command(wire);
        CHECK(decoded.verb == cmd.verb);
        compare_tokens(cmd.args, decoded.args);
        if (counter == max_tag_counter)
            counter = 0;
    }
}

TEST_CASE("random search trees render to grammatical commands")
{
    std::mt19937_64 rng(1101);
    const std::vector<std::string> words = {"@ksu.edu", "say \"hi\"", "back\\slash", "na\xC3\xAFve", "(x)", "a%b*c", "z"};
    for (int i = 0; i < 1000; ++i)
    {
        auto c = oracle::random_criterion(rng, 4, words);
        auto wire = serialize_command({static_cast<std::uint32_t>(i % 9999 + 1)}, i % 2 ? "UID SEARCH" : "SEARCH",
                                      criterion_args(c));
        std::string why;
        INFO(wire);
        CHECK_MESSAGE(oracle::command_accepted(wire, &why), why);
    }
}

TEST_CASE("parse_response_line")
{
    SUBCASE("tagged completion")
    {
        auto r = parse_response_line("A0001 OK SELECT completed\r\n");
        CHECK(r.kind == response_kind::tagged_ok);
        CHECK(r.tag == "A0001");
        CHECK(std::get<status_text>(r.payload).text == "SELECT completed");
    }
    SUBCASE("response code")
    {
        auto r = parse_response_line("A0002 NO [AUTHENTICATIONFAILED] Invalid credentials\r\n");
        CHECK(r.kind == response_kind::tagged_no);
        CHECK(std::get<status_text>(r.payload).code == "AUTHENTICATIONFAILED");
        CHECK(std::get<status_text>(r.payload).text == "Invalid credentials");
        CHECK(parse_response_line("A0003 BAD nope\r\n").kind == response_kind::tagged_bad);
    }
    SUBCASE("exists")
    {
        auto r = parse_response_line("* 18 EXISTS\r\n");
        CHECK(r.kind == response_kind::untagged);
        CHECK(std::get<message_count>(r.payload).number == 18);
        CHECK(std::get<message_count>(r.payload).keyword == "EXISTS");
    }
    SUBCASE("continuation")
    {
        CHECK(parse_response_line("+ Ready\r\n").kind == response_kind::continuation);
        CHECK(parse_response_line("+\r\n").kind == response_kind::continuation);
    }
    SUBCASE("capability")
    {
        auto r = parse_response_line("* CAPABILITY IMAP4rev1 WITHIN AUTH=XOAUTH2\r\n");
        CHECK(std::get<capability_list>(r.payload).tokens == std::vector<std::string>{"IMAP4REV1", "WITHIN", "AUTH=XOAUTH2"});
    }
    SUBCASE("list")
    {
        auto r = parse_response_line("* LIST (\\HasNoChildren) \"/\" \"Sent Items\"\r\n");
        auto entry = std::get<folder_entry>(r.payload);
        CHECK(entry.name == "Sent Items");
        CHECK(entry.delimiter == '/');
        CHECK(entry.attributes == std::vector<std::string>{"\\HasNoChildren"});
        auto nil = std::get<folder_entry>(parse_response_line("* LIST () NIL INBOX\r\n").payload);
        CHECK_FALSE(nil.delimiter.has_value());
    }
    SUBCASE("fetch with literal")
    {
        auto r = parse_response_line("* 3 FETCH (UID 60 BODY[] {5}\r\nhello FLAGS (\\Seen))\r\n");
        auto item = std::get<fetch_item>(r.payload);
        CHECK(item.sequence == 3);
        REQUIRE(item.find("BODY[]"));
        CHECK(item.find("BODY[]")->as_nstring() == "hello");
        CHECK(item.find("uid")->as_number() == 60u);
        CHECK(item.find("FLAGS")->items.size() == 1);
    }
    SUBCASE("unknown untagged kept as status text")
    {
        auto r = parse_response_line("* XSTATE whatever 1\r\n");
        CHECK(r.kind == response_kind::untagged);
        CHECK(std::get<status_text>(r.payload).keyword == "XSTATE");
    }
    SUBCASE("non-ASCII status text is replaced")
    {
        auto r = parse_response_line("A0001 OK caf\xC3\xA9\r\n");
        CHECK(std::get<status_text>(r.payload).text == "caf\xEF\xBF\xBD\xEF\xBF\xBD");
    }
    SUBCASE("garbage")
    {
        CHECK(code_of([] { parse_response_line("garbage"); }) == errc::malformed_response);
        CHECK(code_of([] { parse_response_line("\r\n"); }) == errc::malformed_response);
        CHECK(code_of([] { parse_response_line("A0001 MAYBE fine\r\n"); }) == errc::malformed_response);
    }
}

TEST_CASE("parse_search_results")
{
    CHECK(values(parse_search_results("* SEARCH 60 145 147 159 332 333 336 338 341 428\r\n", id_kind::uid)) ==
          ksu_ids);
    CHECK(parse_search_results("* SEARCH\r\n", id_kind::uid).empty());
    auto single = parse_search_results("* SEARCH 7\r\n", id_kind::sequence_number);
    REQUIRE(single.size() == 1);
    CHECK(single[0] == message_id{7, id_kind::sequence_number});
    CHECK(code_of([] { parse_search_results("* SEARCH 1 x 3\r\n", id_kind::uid); }) == errc::malformed_response);
    CHECK(code_of([] { parse_search_results("* SEARCH 0\r\n", id_kind::uid); }) == errc::malformed_response);
    CHECK(code_of([] { parse_search_results("* FETCH 1\r\n", id_kind::uid); }) == errc::malformed_response);
}

TEST_CASE("parse_search_results inverts the search line for random id lists")
{
    std::mt19937_64 rng(77);
    for (int round = 0; round < 50; ++round)
    {
        std::size_t n = round == 0 ? 10000 : std::uniform_int_distribution<std::size_t>(0, 2000)(rng);
        std::vector<std::uint32_t> ids;
        std::string line = "* SEARCH";
        for (std::size_t i = 0; i < n; ++i)
        {
            ids.push_back(std::uniform_int_distribution<std::uint32_t>(1, 4000000000u)(rng));
            line += " " + std::to_string(ids.back());
        }
        line += "\r\n";
        CHECK(values(parse_search_results(line, id_kind::uid)) == ids);
    }
}

TEST_CASE("parse_envelope")
{
    SUBCASE("structured addresses")
    {
        auto env = parse_envelope(
            R"(("Mon, 2 Nov 2020 10:00:00 +0000" "Hello" (("Ann" NIL "ann" "ksu.edu")) (("Ann" NIL "ann" "ksu.edu")) NIL ((NIL NIL "bob" "example.org")("Carl" NIL "carl" "example.org")) NIL NIL NIL "<id@x>"))");
        REQUIRE(env.from.size() == 1);
        CHECK(env.from[0].name == "Ann");
        CHECK(env.from[0].mailbox == "ann");
        CHECK(env.from[0].host == "ksu.edu");
        CHECK(env.from[0].joined() == "ann@ksu.edu");
        CHECK(env.subject == "Hello");
        CHECK(env.reply_to.empty());
        REQUIRE(env.to.size() == 2);
        CHECK_FALSE(env.to[0].name.has_value());
        CHECK(env.to[1].joined() == "carl@example.org");
        CHECK(env.message_id == "<id@x>");
        CHECK_FALSE(env.in_reply_to.has_value());
    }
    SUBCASE("all NIL")
    {
        auto env = parse_envelope("(NIL NIL NIL NIL NIL NIL NIL NIL NIL NIL)");
        CHECK(env == envelope{});
    }
    SUBCASE("encoded words stay encoded")
    {
        auto env = parse_envelope(R"((NIL "=?UTF-8?B?w6k=?=" NIL NIL NIL NIL NIL NIL NIL NIL))");
        CHECK(env.subject == "=?UTF-8?B?w6k=?=");
    }
    SUBCASE("literal subject")
    {
        auto env = parse_envelope("(NIL {3}\r\nabc NIL NIL NIL NIL NIL NIL NIL NIL)");
        CHECK(env.subject == "abc");
    }
    SUBCASE("malformed")
    {
        CHECK(code_of([] { parse_envelope("(NIL NIL"); }) == errc::malformed_envelope);
        CHECK(code_of([] { parse_envelope("(NIL NIL NIL)"); }) == errc::malformed_envelope);
        CHECK(code_of([] { parse_envelope(R"((NIL NIL (("a" NIL)) NIL NIL NIL NIL NIL NIL NIL))"); }) ==
              errc::malformed_envelope);
    }
}

TEST_CASE("parse_bodystructure")
{
    SUBCASE("single part")
    {
        auto root = parse_bodystructure(R"(("TEXT" "PLAIN" ("CHARSET" "us-ascii") NIL NIL "7BIT" 12 1 NIL NIL NIL NIL))");
        CHECK(root.part_number == "1");
        CHECK(root.full_type() == "text/plain");
        CHECK(root.parameters.at("charset") == "us-ascii");
        CHECK(root.size_octets == 12);
        CHECK_FALSE(root.is_multipart());
    }
    SUBCASE("attachment")
    {
        auto root = parse_bodystructure(
            R"((("TEXT" "PLAIN" ("CHARSET" "us-ascii") NIL NIL "7BIT" 12 1 NIL NIL NIL NIL)("APPLICATION" "PDF" ("NAME" "staa2072.pdf") NIL NIL "BASE64" 4096 NIL ("ATTACHMENT" ("FILENAME" "staa2072.pdf")) NIL NIL) "MIXED" ("BOUNDARY" "xyz") NIL NIL NIL))");
        CHECK(root.full_type() == "multipart/mixed");
        REQUIRE(root.children.size() == 2);
        CHECK(root.children[0].part_number == "1");
        const auto& pdf = root.children[1];
        CHECK(pdf.part_number == "2");
        REQUIRE(pdf.disposition.has_value());
        CHECK(pdf.disposition->kind == disposition_kind::attachment);
        CHECK(pdf.disposition->parameters.at("filename") == "staa2072.pdf");
        CHECK(pdf.encoding == transfer_encoding::base64);
    }
    SUBCASE("nested numbering")
    {
        auto root = parse_bodystructure(
            R"(((("TEXT" "PLAIN" NIL NIL NIL "7BIT" 1 1 NIL NIL NIL NIL)("TEXT" "HTML" NIL NIL NIL "7BIT" 1 1 NIL NIL NIL NIL) "ALTERNATIVE" NIL NIL NIL NIL)("IMAGE" "PNG" ("NAME" "a.png") NIL NIL "BASE64" 10 NIL NIL NIL NIL) "MIXED" NIL NIL NIL NIL))");
        std::vector<std::string> numbers;
        walk(root, [&](const body_structure_node& n) { numbers.push_back(n.part_number); });
        CHECK(numbers == std::vector<std::string>{"", "1", "1.1", "1.2", "2"});
    }
    SUBCASE("malformed")
    {
        CHECK(code_of([] { parse_bodystructure("(\"TEXT\""); }) == errc::malformed_body_structure);
        CHECK(code_of([] { parse_bodystructure("NIL"); }) == errc::malformed_body_structure);
        CHECK(code_of([] { parse_bodystructure("(\"TEXT\" \"PLAIN\" NIL NIL NIL \"7BIT\" x)"); }) ==
              errc::malformed_body_structure);
    }
}

TEST_CASE("bodystructure numbering matches enumeration on random trees")
{
    std::mt19937_64 rng(4);
    for (int round = 0; round < 300; ++round)
    {
        std::vector<std::string> expected;
        auto text = random_structure(rng, 4, "", true, expected);
        auto root = parse_bodystructure(text);
        std::vector<std::string> got;
        walk(root, [&](const body_structure_node& n) { got.push_back(n.part_number); });
        CHECK(got == expected);
        std::set<std::string> unique(got.begin(), got.end());
        CHECK(unique.size() == got.size());
    }
}

TEST_CASE("read_full_response")
{
    auto [a, b] = make_memory_pipe();
    connection conn(std::move(a), 1000ms);
    auto put = [&](std::string_view s) { b->write(s, byte_stream::clock::now() + 1s); };

    SUBCASE("two-line exchange")
    {
        put("* SEARCH 7\r\nA0002 OK done\r\n");
        auto rs = read_full_response(conn, {2});
        REQUIRE(rs.size() == 2);
        CHECK(std::get<search_results>(rs[0].payload).ids == std::vector<std::uint32_t>{7});
        CHECK(rs[1].kind == response_kind::tagged_ok);
    }
    SUBCASE("literal bytes")
    {
        put("* 1 FETCH (BODY[TEXT] {5}\r\nhello)\r\nA0003 OK\r\n");
        auto rs = read_full_response(conn, {3});
        REQUIRE(rs.size() == 2);
        CHECK(std::get<fetch_item>(rs[0].payload).find("BODY[TEXT]")->as_nstring() == "hello");
    }
    SUBCASE("literal containing CRLF and braces")
    {
        put("* 1 FETCH (BODY[] {11}\r\n{3}\r\nab\r\n\r\n )\r\nA0004 OK\r\n");
        auto rs = read_full_response(conn, {4});
        CHECK(std::get<fetch_item>(rs[0].payload).find("BODY[]")->as_nstring() == "{3}\r\nab\r\n\r\n");
    }
    SUBCASE("desync")
    {
        put("A0009 OK\r\n");
        CHECK(code_of([&] { read_full_response(conn, {2}); }) == errc::protocol_desync);
    }
    SUBCASE("peer gone")
    {
        put("* SEARCH 1\r\n");
        b->close();
        CHECK(code_of([&] { read_full_response(conn, {2}); }) == errc::connection_closed);
    }
}

TEST_CASE("parse_values")
{
    auto v = parse_values("NIL atom \"q \\\"x\\\"\" {2}\r\nab (1 (2)) BODY[HEADER.FIELDS (FROM TO)]");
    REQUIRE(v.size() == 6);
    CHECK(v[0].is_nil());
    CHECK(v[1].as_nstring() == "atom");
    CHECK(v[2].as_nstring() == "q \"x\"");
    CHECK(v[3].as_nstring() == "ab");
    CHECK(v[4].is_list());
    CHECK(v[4].items[1].items[0].as_number() == 2u);
    CHECK(v[5].text == "BODY[HEADER.FIELDS (FROM TO)]");
    CHECK(code_of([] { parse_values("(unbalanced"); }) == errc::malformed_response);
    CHECK(code_of([] { parse_values("{10}\r\nshort"); }) == errc::malformed_response);
}

TEST_CASE("sanitize_display_text")
{
    CHECK(sanitize_display_text("plain text") == "plain text");
    CHECK(sanitize_display_text("a\x01z") == "a\xEF\xBF\xBDz");
}
