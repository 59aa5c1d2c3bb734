#include <mailpost/attachments.hpp>

#include <algorithm>
#include <fstream>
#include <map>

namespace mailpost
{

namespace fs = std::filesystem;

namespace
{

// One directory level; separators and dot names cannot survive.
std::string safe_component(std::string_view text)
{
    std::string out;
    for (char c : text)
    {
        auto u = static_cast<unsigned char>(c);
        if (c == '/' || c == '\\' || u < 0x20 || u == 0x7F)
            out += '_';
        else
            out += c;
    }
    if (out.empty() || out == "." || out == "..")
        return "_";
    return out;
}

struct pending_file
{
    message_id id;
    std::string filename;
    std::string content;
};

extraction_report write_all(const std::vector<pending_file>& files, const fs::path& dest_dir,
                            const std::string& username, const std::string& folder)
{
    extraction_report report;
    std::map<std::uint32_t, std::vector<std::string>> taken;
    for (const auto& file : files)
    {
        auto name = unique_filename(file.filename, taken[file.id.value]);
        auto directory = message_directory(dest_dir, username, folder, file.id);
        std::error_code ec;
        fs::create_directories(directory, ec);
        if (ec)
        {
            report.failures.push_back({file.id, name, "cannot create " + directory.string() + ": " + ec.message()});
            continue;
        }
        auto path = fs::absolute(directory / name, ec);
        if (ec)
            path = directory / name;
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (out)
            out.write(file.content.data(), static_cast<std::streamsize>(file.content.size()));
        out.close();
        if (!out)
        {
            report.failures.push_back({file.id, name, "cannot write " + path.string()});
            continue;
        }
        report.written.push_back(path.lexically_normal());
    }
    return report;
}

} // namespace

fs::path message_directory(const fs::path& dest_dir, const std::string& username, const std::string& folder,
                           const message_id& id)
{
    auto directory = dest_dir / safe_component(username);
    std::string_view rest = folder;
    for (;;)
    {
        auto slash = rest.find('/');
        directory /= safe_component(rest.substr(0, slash));
        if (slash == std::string_view::npos)
            break;
        rest.remove_prefix(slash + 1);
    }
    return directory / std::to_string(id.value);
}

std::string unique_filename(const std::string& name, std::vector<std::string>& taken)
{
    auto candidate = name;
    auto dot = name.rfind('.');
    if (dot == 0 || dot == std::string::npos)
        dot = name.size();
    for (int n = 1; std::find(taken.begin(), taken.end(), candidate) != taken.end(); ++n)
        candidate = name.substr(0, dot) + "-" + std::to_string(n) + name.substr(dot);
    taken.push_back(candidate);
    return candidate;
}

std::vector<attachment> attachments_of(const fetch_result& fetched)
{
    if (const auto* body = std::get_if<body_payload>(&fetched.item))
        return extract_attachments(parse_mime(body->bytes), fetched.id);
    if (const auto* text = std::get_if<text_payload>(&fetched.item))
        return extract_attachments(parse_text_section(text->bytes), fetched.id);
    return {};
}

extraction_report get_attachments(const std::vector<fetch_result>& fetched, const fs::path& dest_dir,
                                  const std::string& username, const std::string& folder)
{
    std::vector<pending_file> files;
    for (const auto& result : fetched)
        for (auto& item : attachments_of(result))
            files.push_back({result.id, std::move(item.filename), std::move(item.content)});
    return write_all(files, dest_dir, username, folder);
}

extraction_report save_attachment_parts(const std::vector<fetch_result>& parts, const fs::path& dest_dir,
                                        const std::string& username, const std::string& folder)
{
    std::vector<pending_file> files;
    for (const auto& result : parts)
        if (const auto* part = std::get_if<part_payload>(&result.item))
            files.push_back({result.id, part->filename, decode_transfer(part->bytes, part->encoding)});
    return write_all(files, dest_dir, username, folder);
}

} // namespace mailpost
