#pragma once

#include <mailpost/fetch.hpp>
#include <mailpost/mime.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace mailpost
{

struct write_failure
{
    message_id id;
    std::string filename;
    std::string message;
};

struct extraction_report
{
    /// Absolute paths, in fetch order then tree order.
    std::vector<std::filesystem::path> written;
    std::vector<write_failure> failures;
};

/// Attachments of one fetched body or text payload; header and metadata items yield none.
std::vector<attachment> attachments_of(const fetch_result& fetched);

/**
Decodes and writes every attachment to `<dest_dir>/<username>/<folder>/<id>/<filename>`.

Existing files are overwritten. Name clashes inside one message get a `-1`, `-2`, ... suffix before the extension.
Messages without attachments create no directory. I/O problems are collected per file.
**/
extraction_report get_attachments(const std::vector<fetch_result>& fetched, const std::filesystem::path& dest_dir,
                                  const std::string& username, const std::string& folder);

/// Same layout for part items from `fetch_attachments`; transfer decoding happens here.
extraction_report save_attachment_parts(const std::vector<fetch_result>& parts, const std::filesystem::path& dest_dir,
                                        const std::string& username, const std::string& folder);

/// The directory a message's attachments go to.
std::filesystem::path message_directory(const std::filesystem::path& dest_dir, const std::string& username,
                                        const std::string& folder, const message_id& id);

/// Makes `name` unique against `taken` by inserting `-N` before the extension, then records it.
std::string unique_filename(const std::string& name, std::vector<std::string>& taken);

} // namespace mailpost
