#include <doctest.h>

#include "oracles.hpp"

#include <mailpost/cli.hpp>
#include <mailpost/mockserver.hpp>

#include <json.hpp>

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

using namespace mailpost;
namespace fs = std::filesystem;

namespace
{

const std::string user = "alice";
const std::string secret = "Zq7-hunter2-Xv";

struct outcome
{
    int code = -1;
    std::string out;
    std::string err;
};

fs::path scratch(const std::string& name)
{
    auto dir = fs::temp_directory_path() / ("mailpost-cli-" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::shared_ptr<mock::server> fixture_server()
{
    mock::server_options options;
    options.username = user;
    options.password = secret;
    return mock::server::start_stateful(mock::load_fixtures(oracle::fixture_dir()), options);
}

struct harness
{
    std::shared_ptr<mock::server> srv = fixture_server();
    std::map<std::string, std::string> vars;
    fs::path home = scratch("home");

    harness()
    {
        vars["MAILPOST_PASSWORD"] = secret;
        vars["XDG_CONFIG_HOME"] = home.string();
    }

    outcome run(std::vector<std::string> args, const std::string& input = "")
    {
        cli::environment env;
        env.getenv = [this](const std::string& name) -> std::optional<std::string> {
            auto it = vars.find(name);
            if (it == vars.end())
                return std::nullopt;
            return it->second;
        };
        env.prompt_secret = [](const std::string&) -> std::optional<std::string> { return std::nullopt; };
        env.connect = srv->memory_connector();
        args.insert(args.begin(), {"--url", "imaps://mock.test", "--user", user});
        std::istringstream in(input);
        std::ostringstream out, err;
        outcome o;
        o.code = cli::run(args, in, out, err, env);
        o.out = out.str();
        o.err = err.str();
        return o;
    }
};

std::vector<std::string> lines(const std::string& text)
{
    std::vector<std::string> result;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);)
        result.push_back(line);
    return result;
}

std::string slurp(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

/// Oracle: senders containing the needle, straight from the raw fixture headers.
std::vector<std::string> inbox_uids_from(const std::string& needle)
{
    std::vector<std::string> ids;
    for (const auto& box : mock::load_fixtures(oracle::fixture_dir()))
    {
        if (box.folder != "INBOX")
            continue;
        for (const auto& m : box.messages)
        {
            auto headers = oracle::header_fields(m.raw);
            for (auto [it, end] = headers.equal_range("from"); it != end; ++it)
            {
                auto value = it->second;
                std::transform(value.begin(), value.end(), value.begin(), ::tolower);
                if (value.find(needle) != std::string::npos)
                {
                    ids.push_back(std::to_string(m.uid));
                    break;
                }
            }
        }
    }
    return ids;
}

} // namespace

TEST_CASE("folders and capabilities")
{
    harness h;
    auto listed = h.run({"folders", "list"});
    REQUIRE(listed.code == cli::exit_ok);
    auto names = lines(listed.out);
    std::sort(names.begin(), names.end());
    CHECK(names == std::vector<std::string>{"Archive", "Feedback", "INBOX", "Sent"});

    auto caps = h.run({"capabilities"});
    REQUIRE(caps.code == cli::exit_ok);
    CHECK(caps.out.find("IMAP4REV1") != std::string::npos);
    CHECK(caps.out.find('\n') == caps.out.size() - 1);

    auto made = h.run({"folders", "create", "Projects"});
    CHECK(made.code == cli::exit_ok);
    CHECK(h.run({"folders", "rename", "Projects", "Done"}).code == cli::exit_ok);
    CHECK(lines(h.run({"folders", "list"}).out).size() == 5);
    CHECK(h.run({"folders", "delete", "Done"}).code == cli::exit_ok);
    CHECK(lines(h.run({"folders", "list"}).out).size() == 4);
}

TEST_CASE("search prints matching ids")
{
    harness h;
    auto r = h.run({"search", "--from", "@ksu.edu"});
    REQUIRE(r.code == cli::exit_ok);
    auto expected = inbox_uids_from("@ksu.edu");
    CHECK(expected.size() == 10);
    CHECK(lines(r.out) == expected);

    auto js = h.run({"--json", "search", "--from", "@ksu.edu"});
    REQUIRE(js.code == cli::exit_ok);
    auto parsed = nlohmann::json::parse(js.out);
    REQUIRE(parsed.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i)
        CHECK(std::to_string(parsed[i].get<std::uint32_t>()) == expected[i]);

    auto any = h.run({"search", "--or", "--from", "@ksu.edu", "--larger", "100000000"});
    CHECK(lines(any.out) == expected);
    auto none = h.run({"search", "--from", "@ksu.edu", "--larger", "100000000"});
    CHECK(none.code == cli::exit_ok);
    CHECK(none.out.empty());

    auto negated = h.run({"search", "--not", "from=@ksu.edu"});
    REQUIRE(negated.code == cli::exit_ok);
    CHECK(lines(negated.out).size() == 19 - expected.size());
}

TEST_CASE("usage errors exit 2")
{
    harness h;
    auto empty = h.run({"search"});
    CHECK(empty.code == cli::exit_config);
    CHECK_FALSE(empty.err.empty());
    CHECK(h.run({"search", "--since", "10-Mar-2020", "--before", "01-Mar-2020"}).code == cli::exit_config);
    CHECK(h.run({"search", "--since", "2020-03-10"}).code == cli::exit_config);
    CHECK(h.run({"fetch"}).code == cli::exit_config);
    CHECK(h.run({"fetch", "--ids", "12", "--part", "bogus"}).code == cli::exit_config);
    CHECK(h.run({"--no-such-flag", "capabilities"}).code == cli::exit_config);
    CHECK(h.run({"--config", (h.home / "missing").string(), "capabilities"}).code == cli::exit_config);
    CHECK(h.run({"report", "sentiment"}).code == cli::exit_config);

    h.vars.erase("MAILPOST_PASSWORD");
    auto nosecret = h.run({"capabilities"});
    CHECK(nosecret.code == cli::exit_config);
    CHECK(nosecret.err.find("MAILPOST_PASSWORD") != std::string::npos);
}

TEST_CASE("config file supplies settings")
{
    harness h;
    h.vars.erase("MAILPOST_PASSWORD");
    fs::create_directories(h.home / "mailpost");
    {
        std::ofstream cfg(h.home / "mailpost" / "config");
        cfg << "# test\nfolder=Feedback\npassword_env=MY_SECRET\n";
    }
    h.vars["MY_SECRET"] = secret;
    auto r = h.run({"search", "--larger", "1"});
    REQUIRE(r.code == cli::exit_ok);
    CHECK(lines(r.out).size() == 6);

    {
        std::ofstream cfg(h.home / "mailpost" / "config");
        cfg << "this line is broken\n";
    }
    auto bad = h.run({"capabilities"});
    CHECK(bad.code == cli::exit_config);
    CHECK(bad.err.find("line 1") != std::string::npos);
}

TEST_CASE("wrong credentials exit 3 without leaking secrets")
{
    harness h;
    h.vars["MAILPOST_PASSWORD"] = "wrong-" + secret;
    auto r = h.run({"-v", "capabilities"});
    CHECK(r.code == cli::exit_connect);
    CHECK(r.err.find(secret) == std::string::npos);
    CHECK(r.out.find(secret) == std::string::npos);

    h.vars["MAILPOST_PASSWORD"] = secret;
    auto verbose = h.run({"-v", "search", "--from", "@ksu.edu"});
    REQUIRE(verbose.code == cli::exit_ok);
    CHECK(verbose.err.find("C: ") != std::string::npos);
    CHECK(verbose.err.find("S: ") != std::string::npos);
    CHECK(verbose.err.find(secret) == std::string::npos);

    auto help = h.run({"--help"});
    CHECK(help.code == cli::exit_ok);
    CHECK(help.out.find(secret) == std::string::npos);
    CHECK(help.out.find("search") != std::string::npos);
}

TEST_CASE("fetch parts and failures")
{
    harness h;
    auto body = h.run({"fetch", "--ids", "150"});
    REQUIRE(body.code == cli::exit_ok);
    std::string raw;
    for (const auto& box : mock::load_fixtures(oracle::fixture_dir()))
        if (box.folder == "INBOX")
            for (const auto& m : box.messages)
                if (m.uid == 150)
                    raw = m.raw;
    CHECK(body.out == raw);

    auto text = h.run({"fetch", "--ids", "150", "--part", "text"});
    CHECK(text.out == oracle::body_of(raw));

    auto header = h.run({"fetch", "--ids", "150", "--part", "header", "--fields", "Subject"});
    REQUIRE(header.code == cli::exit_ok);
    CHECK(header.out.rfind("Subject:", 0) == 0);

    auto two = h.run({"fetch", "--ids", "12,60", "--part", "header"});
    REQUIRE(two.code == cli::exit_ok);
    CHECK(two.out.rfind("==> 12 <==\n", 0) == 0);
    CHECK(two.out.find("\n==> 60 <==\n") != std::string::npos);

    auto missing = h.run({"fetch", "--ids", "12,999999", "--part", "header"});
    CHECK(missing.code == cli::exit_protocol);
    CHECK(missing.err.find("999999") != std::string::npos);
    CHECK(missing.out.find("==> 12 <==") != std::string::npos);

    auto meta = h.run({"fetch", "--ids", "12,60", "--part", "metadata", "--attrs", "envelope,rfc822.size"});
    REQUIRE(meta.code == cli::exit_ok);
    auto rows = lines(meta.out);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "id,date,from,to,subject,size");
    CHECK(rows[1].rfind("12,", 0) == 0);
    CHECK(rows[2].rfind("60,", 0) == 0);

    auto out_dir = scratch("fetch-out");
    auto written = h.run({"fetch", "--ids", "150", "--out", out_dir.string()});
    REQUIRE(written.code == cli::exit_ok);
    CHECK(slurp(out_dir / "150.body") == raw);
}

TEST_CASE("fetch reads ids from stdin")
{
    harness h;
    auto search = h.run({"search", "--from", "@ksu.edu"});
    auto piped = h.run({"fetch", "--stdin", "--part", "header"}, search.out);
    auto direct = h.run({"fetch", "--ids", "", "--part", "header"});
    CHECK(direct.code == cli::exit_config);
    std::string joined;
    for (const auto& id : lines(search.out))
        joined += (joined.empty() ? "" : ",") + id;
    auto listed = h.run({"fetch", "--ids", joined, "--part", "header"});
    REQUIRE(piped.code == cli::exit_ok);
    CHECK(piped.out == listed.out);

    auto nothing = h.run({"fetch", "--stdin"}, "");
    CHECK(nothing.code == cli::exit_ok);
    CHECK(nothing.out.empty());
}

TEST_CASE("attachments both ways give identical files")
{
    harness h;
    auto a = scratch("attach-a");
    auto b = scratch("attach-b");
    auto via_body = h.run({"attachments", "--ids", "141,144", "--dest", a.string()});
    auto via_parts = h.run({"attachments", "--ids", "141,144", "--dest", b.string(), "--direct"});
    REQUIRE(via_body.code == cli::exit_ok);
    REQUIRE(via_parts.code == cli::exit_ok);
    auto pa = lines(via_body.out);
    auto pb = lines(via_parts.out);
    CHECK(pa.size() == 6);
    REQUIRE(pa.size() == pb.size());
    std::vector<std::string> names;
    for (std::size_t i = 0; i < pa.size(); ++i)
    {
        auto rel_a = fs::relative(pa[i], a);
        auto rel_b = fs::relative(pb[i], b);
        CHECK(rel_a == rel_b);
        CHECK(slurp(pa[i]) == slurp(pb[i]));
        CHECK(fs::file_size(pa[i]) > 0);
        names.push_back(fs::path(pa[i]).filename().string());
    }
    std::sort(names.begin(), names.end());
    CHECK(names == std::vector<std::string>{"app.R", "final.zip", "image001.png", "prob_plot.svg", "recording.mp4",
                                            "staa2072.pdf"});

    auto plain = h.run({"attachments", "--ids", "12", "--dest", scratch("attach-c").string(), "--direct"});
    CHECK(plain.code == cli::exit_ok);
    CHECK(plain.out.empty());
}

TEST_CASE("reports")
{
    harness h;
    auto svg = scratch("report") / "top.svg";
    auto freq = h.run({"report", "frequency", "--top", "5", "--svg", svg.string()});
    REQUIRE(freq.code == cli::exit_ok);
    auto rows = lines(freq.out);
    REQUIRE(rows.size() >= 2);
    CHECK(rows.size() <= 6);
    CHECK(fs::exists(svg));
    CHECK(slurp(svg).find("<svg") != std::string::npos);

    auto again = h.run({"report", "frequency", "--top", "5"});
    CHECK(again.out == freq.out);

    auto js = h.run({"--json", "report", "frequency", "--top", "3"});
    REQUIRE(js.code == cli::exit_ok);
    auto parsed = nlohmann::json::parse(js.out);
    CHECK(parsed.size() <= 3);
    for (std::size_t i = 1; i < parsed.size(); ++i)
        CHECK(parsed[i - 1]["count"].get<int>() >= parsed[i]["count"].get<int>());

    auto lexicon = (oracle::source_dir() / "data" / "demo_lexicon.csv").string();
    auto senti = h.run({"--folder", "Feedback", "report", "sentiment", "--lexicon", lexicon});
    REQUIRE(senti.code == cli::exit_ok);
    auto srows = lines(senti.out);
    REQUIRE(srows.size() == 7);
    for (int i = 1; i <= 6; ++i)
        CHECK(srows[i].rfind("body" + std::to_string(i) + ",", 0) == 0);
    CHECK(h.run({"--folder", "Feedback", "report", "sentiment", "--lexicon", lexicon}).out == senti.out);

    auto window = h.run({"report", "frequency", "--since", "01-Jan-1980", "--before", "02-Jan-1980"});
    CHECK(window.code == cli::exit_ok);
    CHECK(lines(window.out).size() == 1);
}

// ---- the installed binaries ----

namespace
{

struct mock_process
{
    pid_t pid = -1;
    int port = 0;
    fs::path pem;

    mock_process()
    {
        auto dir = scratch("proc");
        pem = dir / "cert.pem";
        int fds[2];
        REQUIRE(::pipe(fds) == 0);
        pid = ::fork();
        REQUIRE(pid >= 0);
        if (pid == 0)
        {
            ::dup2(fds[1], STDOUT_FILENO);
            ::close(fds[0]);
            ::close(fds[1]);
            auto fixtures = oracle::fixture_dir().string();
            auto pem_path = pem.string();
            ::execl(MAILPOST_MOCK_BIN, MAILPOST_MOCK_BIN, "--fixtures", fixtures.c_str(), "--cert-out",
                    pem_path.c_str(), "--user", user.c_str(), "--password", secret.c_str(), nullptr);
            ::_exit(127);
        }
        ::close(fds[1]);
        std::string line;
        char c;
        while (::read(fds[0], &c, 1) == 1 && c != '\n')
            line += c;
        ::close(fds[0]);
        port = line.empty() ? 0 : std::stoi(line);
    }

    ~mock_process()
    {
        if (pid > 0)
        {
            ::kill(pid, SIGTERM);
            int status = 0;
            ::waitpid(pid, &status, 0);
        }
    }
};

outcome shell(const std::string& command)
{
    auto err_file = scratch("shell-err") / "err";
    auto full = "(" + command + ") 2>" + err_file.string();
    outcome o;
    FILE* p = ::popen(full.c_str(), "r");
    REQUIRE(p);
    char buffer[4096];
    std::size_t n;
    while ((n = std::fread(buffer, 1, sizeof buffer, p)) > 0)
        o.out.append(buffer, n);
    int status = ::pclose(p);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.err = slurp(err_file);
    return o;
}

} // namespace

TEST_CASE("binaries over TLS: pipeline, exit codes, secret hygiene")
{
    mock_process mock;
    REQUIRE(mock.port > 0);
    auto common = std::string(MAILPOST_BIN) + " --url imaps://localhost:" + std::to_string(mock.port) +
                  " --user " + user + " --ca-file " + mock.pem.string();
    auto env = "env XDG_CONFIG_HOME=" + scratch("proc-home").string() + " MAILPOST_PASSWORD=" + secret + " ";

    auto piped = shell(env + common + " search --from @ksu.edu | " + env + common +
                       " fetch --stdin --part body --mime-level 1");
    REQUIRE(piped.code == 0);

    harness h;
    auto ids = h.run({"search", "--from", "@ksu.edu"});
    auto in_process = h.run({"fetch", "--stdin", "--part", "body", "--mime-level", "1"}, ids.out);
    CHECK(piped.out == in_process.out);
    CHECK_FALSE(piped.out.empty());

    auto caps = shell(env + common + " capabilities");
    CHECK(caps.code == 0);
    CHECK(caps.out.find("IMAP4REV1") != std::string::npos);

    auto wrong = shell("env MAILPOST_PASSWORD=nope-" + secret + " " + common + " -v capabilities");
    CHECK(wrong.code == 3);
    CHECK(wrong.err.find(secret) == std::string::npos);
    CHECK(wrong.out.find(secret) == std::string::npos);

    auto verbose = shell(env + common + " -v fetch --ids 12,999999 --part header");
    CHECK(verbose.code == 4);
    CHECK(verbose.err.find("999999") != std::string::npos);
    CHECK(verbose.err.find(secret) == std::string::npos);

    auto untrusted = shell(env + std::string(MAILPOST_BIN) + " --url imaps://localhost:" +
                           std::to_string(mock.port) + " --user " + user + " capabilities");
    CHECK(untrusted.code == 3);
    auto insecure = shell(env + std::string(MAILPOST_BIN) + " --url imaps://localhost:" +
                          std::to_string(mock.port) + " --user " + user + " --insecure capabilities");
    CHECK(insecure.code == 0);

    auto refused = shell(env + std::string(MAILPOST_BIN) + " --url imaps://localhost:1 --user " + user +
                         " --timeout 2 capabilities");
    CHECK(refused.code == 3);

    auto usage = shell(env + common + " search");
    CHECK(usage.code == 2);

    auto help = shell(env + std::string(MAILPOST_BIN) + " --help");
    CHECK(help.code == 0);
    CHECK(help.out.find(secret) == std::string::npos);
}
