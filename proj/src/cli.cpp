#include <mailpost/cli.hpp>

#include <mailpost/analytics.hpp>
#include <mailpost/attachments.hpp>
#include <mailpost/error.hpp>
#include <mailpost/fetch.hpp>
#include <mailpost/mime.hpp>
#include <mailpost/search.hpp>
#include <mailpost/session.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fcntl.h>
#include <termios.h>
#include <unistd.h>

namespace mailpost::cli
{

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace
{

[[noreturn]] void usage_error(const std::string& message)
{
    throw error(errc::invalid_argument, message);
}

std::string_view trim(std::string_view text)
{
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t'))
        text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
        text.remove_suffix(1);
    return text;
}

std::string lower(std::string_view text)
{
    std::string out(text);
    for (auto& c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::chrono::milliseconds parse_seconds(std::string_view text)
{
    double seconds = 0;
    try
    {
        std::size_t used = 0;
        seconds = std::stod(std::string(text), &used);
        if (used != text.size())
            throw std::invalid_argument("trailing");
    }
    catch (const std::exception&)
    {
        usage_error("invalid timeout \"" + std::string(text) + "\"");
    }
    if (!(seconds > 0) || seconds > 86400)
        usage_error("timeout must be between 0 and 86400 seconds");
    return std::chrono::milliseconds(static_cast<std::int64_t>(seconds * 1000));
}

int exit_for(errc code)
{
    switch (code)
    {
        case errc::unsupported_scheme:
        case errc::malformed_url:
        case errc::invalid_timeout:
        case errc::invalid_argument:
        case errc::invalid_range:
        case errc::bad_lexicon_line:
            return exit_config;
        case errc::connect_timeout:
        case errc::tls_failure:
        case errc::refused:
        case errc::connection_closed:
        case errc::read_timeout:
        case errc::auth_failed:
            return exit_connect;
        default:
            return exit_protocol;
    }
}

std::vector<std::uint32_t> parse_id_list(std::string_view text)
{
    std::vector<std::uint32_t> ids;
    std::size_t pos = 0;
    while (pos < text.size())
    {
        auto start = text.find_first_not_of(" \t\r\n,", pos);
        if (start == std::string_view::npos)
            break;
        auto end = text.find_first_of(" \t\r\n,", start);
        auto word = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
        std::uint32_t value = 0;
        auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), value);
        if (ec != std::errc() || ptr != word.data() + word.size() || value == 0)
            usage_error("invalid message id \"" + sanitize_display_text(word) + "\"");
        ids.push_back(value);
        pos = end == std::string_view::npos ? text.size() : end;
    }
    return ids;
}

std::vector<std::string> split_list(std::string_view text)
{
    std::vector<std::string> items;
    std::size_t pos = 0;
    while (pos <= text.size())
    {
        auto comma = text.find(',', pos);
        auto item = trim(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
        if (!item.empty())
            items.emplace_back(item);
        if (comma == std::string_view::npos)
            break;
        pos = comma + 1;
    }
    return items;
}

std::string format_addresses(const std::vector<address>& list)
{
    std::string out;
    for (const auto& a : list)
    {
        if (!out.empty())
            out += "; ";
        auto mail = a.host.empty() ? a.mailbox : a.joined();
        if (a.name && !a.name->empty())
            out += decode_mime_header(*a.name) + " <" + mail + ">";
        else
            out += mail;
    }
    return out;
}

std::optional<message_flag> parse_flag_name(std::string_view name)
{
    static const std::pair<std::string_view, message_flag> names[] = {
        {"seen", message_flag::seen},       {"answered", message_flag::answered}, {"flagged", message_flag::flagged},
        {"deleted", message_flag::deleted}, {"draft", message_flag::draft},       {"recent", message_flag::recent}};
    for (const auto& [text, flag] : names)
        if (text == name)
            return flag;
    return std::nullopt;
}

std::uint64_t parse_count(std::string_view text, const std::string& what)
{
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || ec != std::errc() || ptr != text.data() + text.size())
        usage_error(what + " needs a non-negative integer, got \"" + sanitize_display_text(text) + "\"");
    return value;
}

// ---- search flags ----

struct search_flags
{
    std::string since, before, on;
    std::string from, to, cc, subject, body, text;
    std::vector<std::string> headers;
    std::vector<std::string> flags;
    std::string larger, smaller, younger, older;
    std::vector<std::string> negated;
    bool any = false;
};

/// One criterion from a `key=value` pair, the same keys the flags use.
search_criterion single_criterion(const std::string& key, const std::string& value)
{
    if (key == "since")
        return criteria::since(parse_imap_date(value));
    if (key == "before")
        return criteria::before(parse_imap_date(value));
    if (key == "on")
        return criteria::on(parse_imap_date(value));
    static const std::pair<std::string_view, search_field> fields[] = {
        {"from", search_field::from},       {"to", search_field::to},     {"cc", search_field::cc},
        {"bcc", search_field::bcc},         {"subject", search_field::subject}, {"body", search_field::body},
        {"text", search_field::text}};
    for (const auto& [name, field] : fields)
        if (key == name)
            return criteria::match(field, value);
    if (key == "header")
    {
        auto colon = value.find(':');
        if (colon == std::string::npos)
            usage_error("--header expects \"Name: value\"");
        return criteria::header(std::string(trim(value.substr(0, colon))), std::string(trim(value.substr(colon + 1))));
    }
    if (key == "flag")
    {
        auto name = lower(value);
        bool negated = name.rfind("un", 0) == 0 && parse_flag_name(name.substr(2));
        auto flag = parse_flag_name(negated ? name.substr(2) : name);
        if (!flag)
            usage_error("unknown flag \"" + sanitize_display_text(value) + "\"");
        return criteria::flag(*flag, negated);
    }
    if (key == "larger")
        return criteria::size(size_relation::larger, parse_count(value, "--larger"));
    if (key == "smaller")
        return criteria::size(size_relation::smaller, parse_count(value, "--smaller"));
    if (key == "younger")
        return criteria::within_window(within_relation::younger, parse_count(value, "--younger"));
    if (key == "older")
        return criteria::within_window(within_relation::older, parse_count(value, "--older"));
    usage_error("unknown search key \"" + sanitize_display_text(key) + "\"");
}

search_criterion build_criterion(const search_flags& f)
{
    std::vector<search_criterion> items;
    auto add = [&](const std::string& key, const std::string& value) {
        if (!value.empty())
            items.push_back(single_criterion(key, value));
    };
    add("since", f.since);
    add("before", f.before);
    add("on", f.on);
    add("from", f.from);
    add("to", f.to);
    add("cc", f.cc);
    add("subject", f.subject);
    add("body", f.body);
    add("text", f.text);
    for (const auto& h : f.headers)
        add("header", h);
    for (const auto& flag : f.flags)
        add("flag", flag);
    add("larger", f.larger);
    add("smaller", f.smaller);
    add("younger", f.younger);
    add("older", f.older);
    for (const auto& n : f.negated)
    {
        auto eq = n.find('=');
        if (eq == std::string::npos)
            usage_error("--not expects key=value");
        items.push_back(criteria::negate(single_criterion(lower(n.substr(0, eq)), n.substr(eq + 1))));
    }
    if (items.empty())
        usage_error("at least one search criterion is required");

    if (!f.any)
    {
        // contradictions only matter when every criterion must hold
        if (!f.since.empty() && !f.before.empty() && !(parse_imap_date(f.since) < parse_imap_date(f.before)))
            usage_error("--since must be earlier than --before");
        if (!f.on.empty())
        {
            auto on = parse_imap_date(f.on);
            if ((!f.since.empty() && on < parse_imap_date(f.since)) || (!f.before.empty() && !(on < parse_imap_date(f.before))))
                usage_error("--on lies outside the --since/--before range");
        }
        if (!f.larger.empty() && !f.smaller.empty() &&
            parse_count(f.smaller, "--smaller") <= parse_count(f.larger, "--larger") + 1)
            usage_error("--larger and --smaller leave no possible size");
        for (const auto& a : f.flags)
            for (const auto& b : f.flags)
                if (lower(a) == "un" + lower(b))
                    usage_error("--flag " + b + " contradicts --flag " + a);
    }

    if (items.size() == 1)
        return items.front();
    if (!f.any)
        return criteria::all(std::move(items));
    auto combined = items.back();
    for (auto it = std::next(items.rbegin()); it != items.rend(); ++it)
        combined = criteria::any(*it, combined);
    return combined;
}

std::optional<report_period> period_from(const std::string& since, const std::string& before)
{
    if (since.empty() != before.empty())
        usage_error("--since and --before must be given together");
    if (since.empty())
        return std::nullopt;
    report_period period{parse_imap_date(since), parse_imap_date(before)};
    if (!(period.since < period.before))
        usage_error("--since must be earlier than --before");
    return period;
}

// ---- the front end ----

struct options
{
    std::string config_path;
    std::string url;
    std::string user;
    std::string password_env;
    std::string auth;
    std::string timeout;
    std::string folder;
    std::string ca_file;
    bool insecure = false;
    bool json = false;
    bool seq = false;
    bool verbose = false;

    std::string folder_name;
    std::string new_name;

    search_flags search;

    std::string ids;
    bool from_stdin = false;
    std::string part = "body";
    unsigned mime_level = 0;
    std::string fields;
    std::string attrs;
    std::string out_dir;

    std::string dest;
    bool direct = false;

    std::string since;
    std::string before;
    std::size_t top = 10;
    std::string svg;
    std::string lexicon;
};

class front_end
{
public:
    front_end(const options& opts, std::istream& in, std::ostream& out, std::ostream& err, const environment& env)
        : opts_(opts), in_(in), out_(out), err_(err), env_(env)
    {
    }

    void load_config()
    {
        std::optional<fs::path> path;
        bool explicit_path = !opts_.config_path.empty();
        if (explicit_path)
            path = opts_.config_path;
        else
            path = default_config_path(env_.getenv);
        std::ifstream file(*path, std::ios::binary);
        if (!file)
        {
            if (explicit_path)
                usage_error("cannot read config file " + path->string());
        }
        else
        {
            std::ostringstream text;
            text << file.rdbuf();
            apply_config_text(config_, text.str());
        }
        if (!opts_.url.empty())
            config_.url = opts_.url;
        if (!opts_.user.empty())
            config_.username = opts_.user;
        if (!opts_.password_env.empty())
            config_.password_env = opts_.password_env;
        if (!opts_.auth.empty())
            config_.auth = lower(opts_.auth);
        if (!opts_.timeout.empty())
            config_.timeout = parse_seconds(opts_.timeout);
        if (!opts_.folder.empty())
            config_.folder = opts_.folder;
        if (!opts_.ca_file.empty())
            config_.ca_file = opts_.ca_file;
        if (opts_.insecure)
            config_.insecure = true;
        if (config_.auth != "password" && config_.auth != "xoauth2")
            usage_error("--auth must be password or xoauth2");
    }

    session connect()
    {
        if (config_.url.empty())
            usage_error("no server URL; use --url or the url config key");
        if (config_.username.empty())
            usage_error("no username; use --user or the username config key");
        imap_config imap;
        imap.url = config_.url;
        imap.username = config_.username;
        imap.timeout = config_.timeout;
        imap.use_uid = !opts_.seq;
        imap.verify_tls = !config_.insecure;
        auto secret = resolve_secret();
        if (config_.auth == "xoauth2")
            imap.auth = xoauth2_auth{std::move(secret)};
        else
            imap.auth = password_auth{std::move(secret)};

        trace_sink trace;
        if (opts_.verbose)
            trace = [this](bool outgoing, std::string_view line) {
                err_ << (outgoing ? "C: " : "S: ") << sanitize_display_text(line) << "\n";
            };
        connector connect_with = env_.connect;
        if (!connect_with)
            connect_with = tls_connector({!config_.insecure, config_.ca_file});
        return session::configure_imap(imap, connect_with, trace);
    }

    int capabilities()
    {
        auto s = connect();
        auto caps = s.list_server_capabilities();
        if (opts_.json)
            out_ << json(caps).dump() << "\n";
        else
        {
            for (std::size_t i = 0; i < caps.size(); ++i)
                out_ << (i ? " " : "") << caps[i];
            out_ << "\n";
        }
        s.logout();
        return exit_ok;
    }

    int folders(const std::string& action)
    {
        auto s = connect();
        if (action == "list")
        {
            auto names = s.list_folders();
            if (opts_.json)
                out_ << json(names).dump() << "\n";
            else
                for (const auto& name : names)
                    out_ << name << "\n";
        }
        else if (action == "create")
            s.create_folder(opts_.folder_name);
        else if (action == "rename")
            s.rename_folder(opts_.folder_name, opts_.new_name);
        else if (action == "delete")
            s.delete_folder(opts_.folder_name);
        s.logout();
        return exit_ok;
    }

    int search()
    {
        auto criterion = build_criterion(opts_.search);
        auto s = connect();
        s.select_folder(config_.folder);
        auto ids = mailpost::search(s, criterion);
        print_ids(ids);
        s.logout();
        return exit_ok;
    }

    int fetch()
    {
        auto ids = requested_ids();
        if (!ids)
            return exit_ok;
        auto part = lower(opts_.part);
        if (part != "body" && part != "header" && part != "text" && part != "metadata")
            usage_error("--part must be body, header, text or metadata");
        if (opts_.mime_level && part != "body")
            usage_error("--mime-level only applies to --part body");

        auto s = connect();
        s.select_folder(config_.folder);
        auto message_ids = to_message_ids(*ids, s.ids());
        std::vector<fetch_result> results;
        if (part == "body")
            results = fetch_body(s, message_ids, opts_.mime_level ? std::optional<unsigned>(opts_.mime_level) : std::nullopt);
        else if (part == "header")
            results = fetch_header(s, message_ids, split_list(opts_.fields));
        else if (part == "text")
            results = fetch_text(s, message_ids);
        else
        {
            auto attrs = opts_.attrs.empty() ? metadata_attributes() : split_list(opts_.attrs);
            for (auto& a : attrs)
                for (auto& c : a)
                    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            results = fetch_metadata(s, message_ids, attrs);
            s.logout();
            print_metadata(results, attrs);
            return report_failures(results);
        }
        s.logout();

        if (!opts_.out_dir.empty())
        {
            std::error_code ec;
            fs::create_directories(opts_.out_dir, ec);
            if (ec)
                throw error(errc::io_error, "cannot create " + opts_.out_dir + ": " + ec.message());
            for (const auto& result : results)
            {
                const auto* bytes = result.raw_bytes();
                if (!bytes)
                    continue;
                auto path = fs::path(opts_.out_dir) / (std::to_string(result.id.value) + "." + part);
                std::ofstream file(path, std::ios::binary | std::ios::trunc);
                file.write(bytes->data(), static_cast<std::streamsize>(bytes->size()));
                file.close();
                if (!file)
                    throw error(errc::io_error, "cannot write " + path.string());
                out_ << path.string() << "\n";
            }
        }
        else if (opts_.json)
        {
            json rows = json::array();
            for (const auto& result : results)
                if (const auto* bytes = result.raw_bytes())
                    rows.push_back({{"id", result.id.value}, {"part", part}, {"content", *bytes}});
            out_ << rows.dump(-1, ' ', false, json::error_handler_t::replace) << "\n";
        }
        else
        {
            std::size_t ok = static_cast<std::size_t>(std::count_if(results.begin(), results.end(),
                                                                    [](const fetch_result& r) { return r.ok(); }));
            for (const auto& result : results)
            {
                const auto* bytes = result.raw_bytes();
                if (!bytes)
                    continue;
                if (results.size() == 1)
                {
                    out_ << *bytes;
                    continue;
                }
                out_ << "==> " << result.id.value << " <==\n" << *bytes;
                if (!bytes->empty() && bytes->back() != '\n')
                    out_ << "\n";
            }
            (void)ok;
        }
        return report_failures(results);
    }

    int attachments()
    {
        auto ids = requested_ids();
        if (!ids)
            return exit_ok;
        auto dest = opts_.dest.empty() ? fs::current_path() : fs::path(opts_.dest);
        auto s = connect();
        s.select_folder(config_.folder);
        auto message_ids = to_message_ids(*ids, s.ids());
        auto folder = s.state().selected_folder.value_or(config_.folder);
        extraction_report report;
        int code = exit_ok;
        if (opts_.direct)
        {
            auto parts = fetch_attachments(s, message_ids);
            s.logout();
            std::vector<fetch_result> kept;
            for (auto& p : parts)
            {
                const auto* failure = std::get_if<fetch_failure>(&p.item);
                if (failure && failure->code == errc::no_attachments)
                    continue;
                kept.push_back(std::move(p));
            }
            code = report_failures(kept);
            report = save_attachment_parts(kept, dest, config_.username, folder);
        }
        else
        {
            auto bodies = fetch_body(s, message_ids);
            s.logout();
            code = report_failures(bodies);
            report = get_attachments(bodies, dest, config_.username, folder);
        }
        if (opts_.json)
        {
            json paths = json::array();
            for (const auto& p : report.written)
                paths.push_back(p.string());
            out_ << paths.dump() << "\n";
        }
        else
            for (const auto& p : report.written)
                out_ << p.string() << "\n";
        for (const auto& f : report.failures)
        {
            err_ << "mailpost: message " << f.id.value << ": " << f.filename << ": " << f.message << "\n";
            code = exit_protocol;
        }
        return code;
    }

    int frequency()
    {
        if (opts_.top == 0)
            usage_error("--top must be at least 1");
        auto period = period_from(opts_.since, opts_.before);
        auto s = connect();
        s.select_folder(config_.folder);
        auto ids = period_ids(s, period);
        std::vector<std::pair<message_id, envelope>> envelopes;
        int code = exit_ok;
        if (!ids.empty())
        {
            auto results = fetch_metadata(s, ids, {"ENVELOPE"});
            code = report_failures(results);
            for (const auto& r : results)
                if (const auto* meta = std::get_if<message_metadata>(&r.item); meta && meta->env)
                    envelopes.emplace_back(r.id, *meta->env);
        }
        s.logout();
        auto report = sender_frequency(envelopes, opts_.top, period);
        if (opts_.json)
        {
            json rows = json::array();
            for (const auto& row : report.rows)
                rows.push_back({{"email", row.email}, {"name", row.name}, {"count", row.count}});
            out_ << rows.dump(-1, ' ', false, json::error_handler_t::replace) << "\n";
        }
        else
            out_ << frequency_csv(report);
        if (!opts_.svg.empty())
        {
            if (report.rows.empty())
                err_ << "mailpost: no messages in the period, chart not written\n";
            else
                render_frequency_chart(report, opts_.svg);
        }
        return code;
    }

    int sentiment()
    {
        if (opts_.lexicon.empty())
            usage_error("--lexicon is required");
        auto period = period_from(opts_.since, opts_.before);
        sentiment_lexicon lexicon;
        try
        {
            lexicon = load_lexicon(opts_.lexicon);
        }
        catch (const error& e)
        {
            if (e.code() == errc::io_error)
                usage_error(e.what());
            throw;
        }
        auto s = connect();
        s.select_folder(config_.folder);
        auto ids = period_ids(s, period);
        std::vector<std::string> texts;
        int code = exit_ok;
        if (!ids.empty())
        {
            auto results = fetch_text(s, ids);
            code = report_failures(results);
            for (const auto& r : results)
                if (const auto* text = std::get_if<text_payload>(&r.item))
                    texts.push_back(text->bytes);
        }
        s.logout();
        auto report = sentiment_table(clean_msg_text(texts), lexicon);
        if (opts_.json)
        {
            json rows = json::array();
            for (const auto& row : report.rows)
            {
                json entry = {{"label", row.label}};
                for (std::size_t i = 0; i < emotion_count; ++i)
                    entry[std::string(emotion_names()[i])] = row.counts[i];
                rows.push_back(entry);
            }
            out_ << rows.dump() << "\n";
        }
        else
            out_ << sentiment_csv(report);
        return code;
    }

private:
    std::string resolve_secret()
    {
        const char* what = config_.auth == "xoauth2" ? "bearer token" : "password";
        if (config_.password_env)
        {
            auto value = env_.getenv(*config_.password_env);
            if (!value)
                usage_error("environment variable " + *config_.password_env + " is not set");
            return *value;
        }
        if (config_.inline_password)
            return *config_.inline_password;
        if (config_.password_file)
        {
            std::ifstream file(*config_.password_file, std::ios::binary);
            if (!file)
                usage_error("cannot read password file " + *config_.password_file);
            std::string secret;
            std::getline(file, secret);
            if (!secret.empty() && secret.back() == '\r')
                secret.pop_back();
            return secret;
        }
        if (auto value = env_.getenv("MAILPOST_PASSWORD"))
            return *value;
        if (env_.prompt_secret)
            if (auto value = env_.prompt_secret(std::string(what == std::string("password") ? "Password" : "Bearer token") +
                                                " for " + config_.username + ": "))
                return *value;
        usage_error(std::string("no ") + what + " source; set MAILPOST_PASSWORD or use --password-env");
    }

    /// nullopt when stdin was requested but carried no ids.
    std::optional<std::vector<std::uint32_t>> requested_ids()
    {
        if (opts_.from_stdin == !opts_.ids.empty())
            usage_error("give exactly one of --ids or --stdin");
        if (opts_.from_stdin)
        {
            std::ostringstream text;
            text << in_.rdbuf();
            auto ids = parse_id_list(text.str());
            if (ids.empty())
                return std::nullopt;
            return ids;
        }
        auto ids = parse_id_list(opts_.ids);
        if (ids.empty())
            usage_error("--ids is empty");
        return ids;
    }

    static std::vector<message_id> to_message_ids(const std::vector<std::uint32_t>& values, id_kind kind)
    {
        std::vector<message_id> ids;
        for (auto v : values)
            ids.push_back({v, kind});
        return ids;
    }

    std::vector<message_id> period_ids(session& s, const std::optional<report_period>& period)
    {
        if (period)
            return search_period(s, period->since, period->before);
        auto responses = s.execute(s.ids() == id_kind::uid ? "UID SEARCH" : "SEARCH", {command_arg::atom("ALL")});
        if (completion_kind(responses) != response_kind::tagged_ok)
            throw error(errc::search_refused, "SEARCH ALL failed: " + completion_text(responses));
        std::vector<message_id> ids;
        for (const auto& r : responses)
            if (const auto* results = std::get_if<search_results>(&r.payload))
                for (auto value : results->ids)
                    ids.push_back({value, s.ids()});
        return ids;
    }

    void print_ids(const std::vector<message_id>& ids)
    {
        if (opts_.json)
        {
            json values = json::array();
            for (const auto& id : ids)
                values.push_back(id.value);
            out_ << values.dump() << "\n";
            return;
        }
        for (const auto& id : ids)
            out_ << id.value << "\n";
    }

    void print_metadata(const std::vector<fetch_result>& results, const std::vector<std::string>& attrs)
    {
        auto wants = [&](std::string_view a) { return std::find(attrs.begin(), attrs.end(), a) != attrs.end(); };
        std::vector<std::string> columns = {"id"};
        if (wants("ENVELOPE"))
            columns.insert(columns.end(), {"date", "from", "to", "subject"});
        if (wants("INTERNALDATE"))
            columns.emplace_back("internal_date");
        if (wants("FLAGS"))
            columns.emplace_back("flags");
        if (wants("RFC822.SIZE"))
            columns.emplace_back("size");
        if (wants("UID"))
            columns.emplace_back("uid");

        json rows = json::array();
        for (const auto& result : results)
        {
            const auto* meta = std::get_if<message_metadata>(&result.item);
            if (!meta)
                continue;
            std::map<std::string, std::string> row;
            row["id"] = std::to_string(result.id.value);
            if (meta->env)
            {
                row["date"] = meta->env->date.value_or("");
                row["from"] = format_addresses(meta->env->from);
                row["to"] = format_addresses(meta->env->to);
                row["subject"] = decode_mime_header(meta->env->subject.value_or(""));
            }
            if (meta->internal_date)
                row["internal_date"] = *meta->internal_date;
            if (meta->flags)
            {
                std::string flags;
                for (const auto& f : *meta->flags)
                    flags += (flags.empty() ? "" : " ") + f;
                row["flags"] = flags;
            }
            if (meta->size)
                row["size"] = std::to_string(*meta->size);
            if (meta->uid)
                row["uid"] = std::to_string(*meta->uid);
            json entry = json::object();
            for (const auto& c : columns)
                entry[c] = row[c];
            rows.push_back(entry);
        }
        if (opts_.json)
        {
            out_ << rows.dump(-1, ' ', false, json::error_handler_t::replace) << "\n";
            return;
        }
        for (std::size_t i = 0; i < columns.size(); ++i)
            out_ << (i ? "," : "") << columns[i];
        out_ << "\n";
        for (const auto& entry : rows)
        {
            for (std::size_t i = 0; i < columns.size(); ++i)
                out_ << (i ? "," : "") << csv_field(entry[columns[i]].get<std::string>());
            out_ << "\n";
        }
    }

    int report_failures(const std::vector<fetch_result>& results)
    {
        int code = exit_ok;
        for (const auto& r : results)
            if (const auto* failure = std::get_if<fetch_failure>(&r.item))
            {
                err_ << "mailpost: message " << r.id.value << ": " << sanitize_display_text(failure->message) << "\n";
                code = exit_protocol;
            }
        return code;
    }

    const options& opts_;
    std::istream& in_;
    std::ostream& out_;
    std::ostream& err_;
    const environment& env_;
    cli_config config_;
};

} // namespace

void apply_config_text(cli_config& config, std::string_view text)
{
    std::size_t line_number = 0;
    std::size_t pos = 0;
    while (pos < text.size())
    {
        auto end = text.find('\n', pos);
        auto line = trim(text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
        pos = end == std::string_view::npos ? text.size() : end + 1;
        ++line_number;
        if (line.empty() || line.front() == '#')
            continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos)
            usage_error("config line " + std::to_string(line_number) + ": expected key=value");
        auto key = lower(trim(line.substr(0, eq)));
        auto value = std::string(trim(line.substr(eq + 1)));
        if (key == "url")
            config.url = value;
        else if (key == "username")
            config.username = value;
        else if (key == "auth")
            config.auth = lower(value);
        else if (key == "password_env")
            config.password_env = value;
        else if (key == "password_file")
            config.password_file = value;
        else if (key == "password")
            config.inline_password = value;
        else if (key == "timeout")
            config.timeout = parse_seconds(value);
        else if (key == "folder")
            config.folder = value;
        else if (key == "ca_file")
            config.ca_file = value;
        else if (key == "insecure")
            config.insecure = value == "true" || value == "1" || value == "yes";
        else
            usage_error("config line " + std::to_string(line_number) + ": unknown key \"" + sanitize_display_text(key) + "\"");
    }
}

fs::path default_config_path(const std::function<std::optional<std::string>(const std::string&)>& getenv)
{
    if (auto xdg = getenv("XDG_CONFIG_HOME"); xdg && !xdg->empty())
        return fs::path(*xdg) / "mailpost" / "config";
    if (auto home = getenv("HOME"); home && !home->empty())
        return fs::path(*home) / ".config" / "mailpost" / "config";
    return fs::path(".mailpost.conf");
}

environment system_environment()
{
    environment env;
    env.getenv = [](const std::string& name) -> std::optional<std::string> {
        if (const char* value = std::getenv(name.c_str()))
            return std::string(value);
        return std::nullopt;
    };
    env.prompt_secret = [](const std::string& prompt) -> std::optional<std::string> {
        int fd = ::open("/dev/tty", O_RDWR | O_CLOEXEC);
        if (fd < 0)
            return std::nullopt;
        termios saved{};
        bool restore = ::tcgetattr(fd, &saved) == 0;
        if (restore)
        {
            termios quiet = saved;
            quiet.c_lflag &= static_cast<tcflag_t>(~ECHO);
            ::tcsetattr(fd, TCSAFLUSH, &quiet);
        }
        (void)!::write(fd, prompt.data(), prompt.size());
        std::string secret;
        char c = 0;
        while (::read(fd, &c, 1) == 1 && c != '\n')
            secret += c;
        (void)!::write(fd, "\n", 1);
        if (restore)
            ::tcsetattr(fd, TCSAFLUSH, &saved);
        ::close(fd);
        return secret;
    };
    return env;
}

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err,
        const environment& env)
{
    options opts;
    CLI::App app{"IMAP mailbox client: search, fetch, attachments and mailbox reports", "mailpost"};
    app.fallthrough();
    app.require_subcommand(1);
    app.set_version_flag("--version", "mailpost 0.1.0");

    app.add_option("--config", opts.config_path, "Config file (default ~/.config/mailpost/config)");
    app.add_option("--url", opts.url, "Server URL, imaps://host[:port]");
    app.add_option("--user", opts.user, "Login name");
    app.add_option("--password-env", opts.password_env, "Environment variable holding the password or token");
    app.add_option("--auth", opts.auth, "password or xoauth2");
    app.add_option("--timeout", opts.timeout, "Network timeout in seconds");
    app.add_option("--folder", opts.folder, "Folder to select (default INBOX)");
    app.add_option("--ca-file", opts.ca_file, "Extra trusted certificates (PEM)");
    app.add_flag("--insecure", opts.insecure, "Skip TLS certificate verification");
    app.add_flag("--json", opts.json, "JSON output");
    app.add_flag("--seq", opts.seq, "Use sequence numbers instead of UIDs");
    app.add_flag("-v,--verbose", opts.verbose, "Print the protocol exchange to stderr");

    auto* caps = app.add_subcommand("capabilities", "List server capabilities");

    auto* folders = app.add_subcommand("folders", "List and manage folders");
    folders->require_subcommand(1);
    auto* folders_list = folders->add_subcommand("list", "List folders");
    auto* folders_create = folders->add_subcommand("create", "Create a folder");
    folders_create->add_option("name", opts.folder_name)->required();
    auto* folders_rename = folders->add_subcommand("rename", "Rename a folder");
    folders_rename->add_option("name", opts.folder_name)->required();
    folders_rename->add_option("new_name", opts.new_name)->required();
    auto* folders_delete = folders->add_subcommand("delete", "Delete a folder");
    folders_delete->add_option("name", opts.folder_name)->required();

    auto* search = app.add_subcommand("search", "Search the folder and print matching ids");
    auto& sf = opts.search;
    search->add_option("--since", sf.since, "On or after DD-Mon-YYYY");
    search->add_option("--before", sf.before, "Before DD-Mon-YYYY");
    search->add_option("--on", sf.on, "On DD-Mon-YYYY");
    search->add_option("--from", sf.from, "From contains");
    search->add_option("--to", sf.to, "To contains");
    search->add_option("--cc", sf.cc, "Cc contains");
    search->add_option("--subject", sf.subject, "Subject contains");
    search->add_option("--body", sf.body, "Body contains");
    search->add_option("--text", sf.text, "Headers or body contain");
    search->add_option("--header", sf.headers, "\"Name: value\" header match")->take_all();
    search->add_option("--flag", sf.flags, "seen, answered, flagged, deleted, draft, recent, or un<flag>")->take_all();
    search->add_option("--larger", sf.larger, "Larger than N octets");
    search->add_option("--smaller", sf.smaller, "Smaller than N octets");
    search->add_option("--younger", sf.younger, "Arrived within N seconds (WITHIN)");
    search->add_option("--older", sf.older, "Arrived more than N seconds ago (WITHIN)");
    search->add_option("--not", sf.negated, "Negated key=value criterion, e.g. from=@example.com")->take_all();
    search->add_flag("--or", sf.any, "Match any criterion instead of all");

    auto* fetch = app.add_subcommand("fetch", "Fetch message content or metadata");
    fetch->add_option("--ids", opts.ids, "Comma-separated ids");
    fetch->add_flag("--stdin", opts.from_stdin, "Read ids from standard input");
    fetch->add_option("--part", opts.part, "body, header, text or metadata");
    fetch->add_option("--mime-level", opts.mime_level, "Body part number for --part body");
    fetch->add_option("--fields", opts.fields, "Header fields for --part header, comma-separated");
    fetch->add_option("--attrs", opts.attrs, "Metadata attributes, comma-separated");
    fetch->add_option("--out", opts.out_dir, "Write <out>/<id>.<part> files");

    auto* attach = app.add_subcommand("attachments", "Save attachments and print their paths");
    attach->add_option("--ids", opts.ids, "Comma-separated ids");
    attach->add_flag("--stdin", opts.from_stdin, "Read ids from standard input");
    attach->add_option("--dest", opts.dest, "Destination directory (default: current directory)");
    attach->add_flag("--direct", opts.direct, "Fetch attachment parts only, using BODYSTRUCTURE");

    auto* report = app.add_subcommand("report", "Mailbox reports");
    report->require_subcommand(1);
    auto* freq = report->add_subcommand("frequency", "Messages per sender as CSV");
    freq->add_option("--since", opts.since, "On or after DD-Mon-YYYY");
    freq->add_option("--before", opts.before, "Before DD-Mon-YYYY");
    freq->add_option("--top", opts.top, "Number of senders to keep");
    freq->add_option("--svg", opts.svg, "Also write a bar chart");
    auto* senti = report->add_subcommand("sentiment", "Emotion word counts per message as CSV");
    senti->add_option("--since", opts.since, "On or after DD-Mon-YYYY");
    senti->add_option("--before", opts.before, "Before DD-Mon-YYYY");
    senti->add_option("--lexicon", opts.lexicon, "word,category CSV");

    try
    {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    }
    catch (const CLI::ParseError& e)
    {
        int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_config;
    }

    front_end fe(opts, in, out, err, env);
    try
    {
        fe.load_config();
        if (*caps)
            return fe.capabilities();
        if (*folders)
        {
            if (*folders_list)
                return fe.folders("list");
            if (*folders_create)
                return fe.folders("create");
            if (*folders_rename)
                return fe.folders("rename");
            return fe.folders("delete");
        }
        if (*search)
            return fe.search();
        if (*fetch)
            return fe.fetch();
        if (*attach)
            return fe.attachments();
        if (*freq)
            return fe.frequency();
        if (*senti)
            return fe.sentiment();
    }
    catch (const error& e)
    {
        err << "mailpost: " << sanitize_display_text(e.what()) << "\n";
        if (e.code() == errc::invalid_argument && std::string_view(e.what()).find("criterion") != std::string_view::npos)
            err << "Run 'mailpost search --help' for usage.\n";
        return exit_for(e.code());
    }
    catch (const std::exception& e)
    {
        err << "mailpost: " << sanitize_display_text(e.what()) << "\n";
        return exit_failure;
    }
    return exit_failure;
}

} // namespace mailpost::cli
