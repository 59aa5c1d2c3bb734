#pragma once

#include <mailpost/protocol.hpp>
#include <mailpost/search.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace mailpost
{

// ---------------------------------------------------------------------------------------------------------------------
// Sender frequency
// ---------------------------------------------------------------------------------------------------------------------

struct frequency_row
{
    /// Lowercased mailbox@host.
    std::string email;
    /// Decoded display name; empty when no envelope carried one.
    std::string name;
    std::uint64_t count = 0;

    friend bool operator==(const frequency_row&, const frequency_row&) = default;
};

struct report_period
{
    imap_date since;
    imap_date before;
};

struct frequency_report
{
    /// Count descending, then address ascending.
    std::vector<frequency_row> rows;
    std::optional<report_period> period;
    /// Envelopes without a usable from address.
    std::uint64_t skipped = 0;
    std::uint64_t analyzed = 0;
};

/**
Counts messages by the first from address of each envelope and keeps the `top_n` busiest senders.

@throw error  `invalid_argument` when `top_n` is 0.
**/
frequency_report sender_frequency(const std::vector<std::pair<message_id, envelope>>& envelopes, std::size_t top_n,
                                  std::optional<report_period> period = std::nullopt);

/// `email,name,count` with a header row.
std::string frequency_csv(const frequency_report& report);

/// "Period: 01-Nov to 01-Dec-2020"; the first year is repeated only when the years differ.
std::string period_subtitle(const report_period& period);

/// Standalone SVG horizontal bar chart, one bar per row. @throw error `invalid_argument` for an empty report.
std::string frequency_svg(const frequency_report& report);

/// @throw error  `invalid_argument` for an empty report, `io_error` when the file cannot be written.
void render_frequency_chart(const frequency_report& report, const std::filesystem::path& path);

// ---------------------------------------------------------------------------------------------------------------------
// Sentiment
// ---------------------------------------------------------------------------------------------------------------------

enum class emotion
{
    anger,
    anticipation,
    disgust,
    fear,
    joy,
    sadness,
    surprise,
    trust,
    negative,
    positive
};

inline constexpr std::size_t emotion_count = 10;

/// Category names in report column order.
const std::array<std::string_view, emotion_count>& emotion_names();

std::optional<emotion> parse_emotion(std::string_view name);

using emotion_counts = std::array<std::uint64_t, emotion_count>;

struct sentiment_lexicon
{
    std::map<std::string, std::set<emotion>> entries;
};

/// Parses "word,category" lines (LF or CRLF). Blank lines and a leading "word,category" header are skipped.
/// @throw error  `bad_lexicon_line` naming the 1-based line.
sentiment_lexicon parse_lexicon(std::string_view text);

/// @throw error  `io_error` or `bad_lexicon_line`.
sentiment_lexicon load_lexicon(const std::filesystem::path& path);

/**
The word cleaning loop used before lexicon lookup: line breaks become spaces, the text is split on single spaces,
tokens holding digits, underscores, "http", "www", "nbsp", "@" or a lowercase-to-uppercase transition are dropped,
then non-word and non-letter characters are stripped and the rest lowercased. Empty tokens are discarded.
**/
std::vector<std::string> tokenize_clean(std::string_view text);

emotion_counts sentiment_counts(const std::vector<std::string>& tokens, const sentiment_lexicon& lexicon);

struct sentiment_row
{
    std::string label;
    emotion_counts counts{};
};

struct sentiment_report
{
    std::vector<sentiment_row> rows;
};

/// One row per text, labelled body1, body2, ...
sentiment_report sentiment_table(const std::vector<std::string>& texts, const sentiment_lexicon& lexicon);

/// `label` followed by the ten category columns.
std::string sentiment_csv(const sentiment_report& report);

/// RFC 4180 field quoting.
std::string csv_field(std::string_view text);

} // namespace mailpost
