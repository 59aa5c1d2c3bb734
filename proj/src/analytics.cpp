#include <mailpost/analytics.hpp>

#include <mailpost/error.hpp>
#include <mailpost/mime.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

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

bool is_ascii_lower(char c)
{
    return c >= 'a' && c <= 'z';
}

bool is_ascii_upper(char c)
{
    return c >= 'A' && c <= 'Z';
}

bool is_word_char(char c)
{
    return is_ascii_lower(c) || is_ascii_upper(c) || (c >= '0' && c <= '9') || c == '_';
}

bool dropped_token(std::string_view token)
{
    for (std::string_view marker : {"http", "www", "nbsp", "@"})
        if (token.find(marker) != std::string_view::npos)
            return true;
    for (std::size_t i = 0; i < token.size(); ++i)
    {
        char c = token[i];
        if ((c >= '0' && c <= '9') || c == '_')
            return true;
        if (i + 1 < token.size() && is_ascii_lower(c) && is_ascii_upper(token[i + 1]))
            return true;
    }
    return false;
}

std::string xml_escape(std::string_view text)
{
    std::string out;
    for (char c : text)
    {
        switch (c)
        {
            case '&':
                out += "&amp;";
                break;
            case '<':
                out += "&lt;";
                break;
            case '>':
                out += "&gt;";
                break;
            case '"':
                out += "&quot;";
                break;
            default:
                out += c;
        }
    }
    return out;
}

std::string_view month_abbrev(int month)
{
    static constexpr std::array<std::string_view, 12> names = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                                               "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
    return names.at(static_cast<std::size_t>(month - 1));
}

} // namespace

frequency_report sender_frequency(const std::vector<std::pair<message_id, envelope>>& envelopes, std::size_t top_n,
                                  std::optional<report_period> period)
{
    if (top_n == 0)
        throw error(errc::invalid_argument, "top_n must be at least 1");
    frequency_report report;
    report.period = period;

    std::map<std::string, frequency_row> tally;
    for (const auto& [id, env] : envelopes)
    {
        ++report.analyzed;
        if (env.from.empty() || env.from.front().mailbox.empty() || env.from.front().host.empty())
        {
            ++report.skipped;
            continue;
        }
        const auto& sender = env.from.front();
        auto email = lower(sender.joined());
        auto& row = tally[email];
        row.email = email;
        ++row.count;
        if (row.name.empty() && sender.name)
            row.name = decode_mime_header(*sender.name);
    }

    for (auto& [email, row] : tally)
        report.rows.push_back(std::move(row));
    std::stable_sort(report.rows.begin(), report.rows.end(), [](const frequency_row& a, const frequency_row& b) {
        if (a.count != b.count)
            return a.count > b.count;
        return a.email < b.email;
    });
    if (report.rows.size() > top_n)
        report.rows.resize(top_n);
    return report;
}

std::string csv_field(std::string_view text)
{
    if (text.find_first_of(",\"\r\n") == std::string_view::npos)
        return std::string(text);
    std::string out = "\"";
    for (char c : text)
    {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

std::string frequency_csv(const frequency_report& report)
{
    std::string out = "email,name,count\n";
    for (const auto& row : report.rows)
        out += csv_field(row.email) + "," + csv_field(row.name) + "," + std::to_string(row.count) + "\n";
    return out;
}

std::string period_subtitle(const report_period& period)
{
    std::ostringstream out;
    auto day = [](int d) { return (d < 10 ? "0" : "") + std::to_string(d); };
    out << "Period: " << day(period.since.day) << "-" << month_abbrev(period.since.month);
    if (period.since.year != period.before.year)
        out << "-" << period.since.year;
    out << " to " << day(period.before.day) << "-" << month_abbrev(period.before.month) << "-" << period.before.year;
    return out.str();
}

std::string frequency_svg(const frequency_report& report)
{
    if (report.rows.empty())
        throw error(errc::invalid_argument, "cannot chart an empty frequency report");

    constexpr int width = 820;
    constexpr int label_width = 300;
    constexpr int bar_area = 440;
    constexpr int row_height = 32;
    constexpr int top = 70;
    const int height = top + static_cast<int>(report.rows.size()) * row_height + 50;
    std::uint64_t max_count = 1;
    for (const auto& row : report.rows)
        max_count = std::max(max_count, row.count);

    static constexpr std::array<std::string_view, 5> palette = {"#3B4992", "#EE0000", "#008B45", "#631879", "#008280"};

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
        << "  <style>text{font-family:sans-serif;font-size:13px}</style>\n"
        << "  <text x=\"" << width / 2 << "\" y=\"26\" text-anchor=\"middle\" font-weight=\"bold\">Messages by sender</text>\n";
    if (report.period)
        svg << "  <text class=\"subtitle\" x=\"12\" y=\"50\">" << xml_escape(period_subtitle(*report.period)) << "</text>\n";

    for (std::size_t i = 0; i < report.rows.size(); ++i)
    {
        const auto& row = report.rows[i];
        int y = top + static_cast<int>(i) * row_height;
        auto length = static_cast<int>(static_cast<double>(row.count) / static_cast<double>(max_count) * bar_area);
        svg << "  <text class=\"label\" x=\"" << label_width - 8 << "\" y=\"" << y + 19
            << "\" text-anchor=\"end\">" << xml_escape(row.email) << "</text>\n"
            << "  <rect x=\"" << label_width << "\" y=\"" << y + 4 << "\" width=\"" << std::max(length, 1)
            << "\" height=\"" << row_height - 8 << "\" fill=\"" << palette[i % palette.size()] << "\"/>\n"
            << "  <text class=\"count\" x=\"" << label_width + std::max(length, 1) + 6 << "\" y=\"" << y + 19 << "\">"
            << row.count << "</text>\n";
    }
    svg << "  <text x=\"" << label_width + bar_area / 2 << "\" y=\"" << height - 14
        << "\" text-anchor=\"middle\">count</text>\n"
        << "</svg>\n";
    return svg.str();
}

void render_frequency_chart(const frequency_report& report, const std::filesystem::path& path)
{
    auto svg = frequency_svg(report);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (out)
        out << svg;
    out.close();
    if (!out)
        throw error(errc::io_error, "cannot write chart to " + path.string());
}

const std::array<std::string_view, emotion_count>& emotion_names()
{
    static constexpr std::array<std::string_view, emotion_count> names = {
        "anger", "anticipation", "disgust", "fear", "joy", "sadness", "surprise", "trust", "negative", "positive"};
    return names;
}

std::optional<emotion> parse_emotion(std::string_view name)
{
    const auto& names = emotion_names();
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name)
            return static_cast<emotion>(i);
    return std::nullopt;
}

sentiment_lexicon parse_lexicon(std::string_view text)
{
    sentiment_lexicon lexicon;
    std::size_t line_number = 0;
    std::size_t pos = 0;
    while (pos < text.size())
    {
        auto end = text.find('\n', pos);
        auto line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
        pos = end == std::string_view::npos ? text.size() : end + 1;
        ++line_number;
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (line.empty())
            continue;
        if (line_number == 1 && line == "word,category")
            continue;

        auto bad = [&](const std::string& why) {
            throw error(errc::bad_lexicon_line, "lexicon line " + std::to_string(line_number) + ": " + why);
        };
        auto comma = line.find(',');
        if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos)
            bad("expected word,category");
        auto word = line.substr(0, comma);
        auto category = line.substr(comma + 1);
        if (word.empty() || !std::all_of(word.begin(), word.end(), is_ascii_lower))
            bad("word must be lowercase letters");
        auto parsed = parse_emotion(category);
        if (!parsed)
            bad("unknown category \"" + sanitize_display_text(category) + "\"");
        lexicon.entries[std::string(word)].insert(*parsed);
    }
    return lexicon;
}

sentiment_lexicon load_lexicon(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw error(errc::io_error, "cannot read lexicon " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_lexicon(buffer.str());
}

std::vector<std::string> tokenize_clean(std::string_view text)
{
    // line breaks to spaces
    std::string flat;
    flat.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i)
    {
        if (text[i] == '\r' && i + 1 < text.size() && text[i + 1] == '\n')
        {
            flat += ' ';
            ++i;
        }
        else if (text[i] == '\r' || text[i] == '\n')
            flat += ' ';
        else
            flat += text[i];
    }

    std::vector<std::string> words;
    std::size_t pos = 0;
    for (;;)
    {
        auto space = flat.find(' ', pos);
        std::string_view token = std::string_view(flat).substr(pos, space == std::string::npos ? std::string::npos : space - pos);
        if (!dropped_token(token))
        {
            std::string word;
            for (char c : token)
                if (is_word_char(c))
                    word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            std::string letters;
            for (char c : word)
                if (is_ascii_lower(c) || is_ascii_upper(c))
                    letters += c;
            if (!letters.empty())
                words.push_back(std::move(letters));
        }
        if (space == std::string::npos)
            break;
        pos = space + 1;
    }
    return words;
}

emotion_counts sentiment_counts(const std::vector<std::string>& tokens, const sentiment_lexicon& lexicon)
{
    emotion_counts counts{};
    for (const auto& token : tokens)
    {
        auto it = lexicon.entries.find(token);
        if (it == lexicon.entries.end())
            continue;
        for (auto category : it->second)
            ++counts[static_cast<std::size_t>(category)];
    }
    return counts;
}

sentiment_report sentiment_table(const std::vector<std::string>& texts, const sentiment_lexicon& lexicon)
{
    sentiment_report report;
    for (std::size_t i = 0; i < texts.size(); ++i)
        report.rows.push_back({"body" + std::to_string(i + 1), sentiment_counts(tokenize_clean(texts[i]), lexicon)});
    return report;
}

std::string sentiment_csv(const sentiment_report& report)
{
    std::string out = "label";
    for (auto name : emotion_names())
        out += "," + std::string(name);
    out += "\n";
    for (const auto& row : report.rows)
    {
        out += csv_field(row.label);
        for (auto count : row.counts)
            out += "," + std::to_string(count);
        out += "\n";
    }
    return out;
}

} // namespace mailpost
