#include <mailpost/fetch.hpp>

#include <mailpost/mime.hpp>

#include <algorithm>
#include <cctype>
#include <map>

namespace mailpost
{

namespace
{

std::string upper(std::string_view text)
{
    std::string out(text);
    for (auto& c : out)
        c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

void check_request(session& s, const std::vector<message_id>& ids, std::string_view operation)
{
    s.require_phase({session_phase::selected}, operation);
    if (ids.empty())
        throw error(errc::invalid_argument, std::string(operation) + " needs at least one message id");
    for (const auto& id : ids)
    {
        if (id.value == 0)
            throw error(errc::invalid_argument, "message ids start at 1");
        if (id.kind != s.ids())
            throw error(errc::invalid_argument, "message id kind does not match the session's id mode");
    }
}

using fetch_map = std::map<std::uint32_t, fetch_item>;

struct batch_outcome
{
    fetch_map items;
    /// Server text for ids whose single-id fetch was refused.
    std::map<std::uint32_t, std::string> refused;
};

void merge_into(fetch_map& items, std::uint32_t key, fetch_item item)
{
    auto [it, inserted] = items.try_emplace(key, std::move(item));
    if (!inserted)
        for (auto& attribute : item.attributes)
            it->second.attributes.push_back(std::move(attribute));
}

void run_batch(session& s, const std::vector<message_id>& ids, const std::vector<command_arg>& items,
               batch_outcome& outcome)
{
    std::vector<command_arg> args{command_arg::atom(sequence_set(ids))};
    if (items.size() == 1)
        args.push_back(items.front());
    else
        args.push_back(command_arg::list(items));

    bool by_uid = s.ids() == id_kind::uid;
    auto responses = s.execute(by_uid ? "UID FETCH" : "FETCH", args);
    auto kind = completion_kind(responses);
    if (kind == response_kind::tagged_bad)
        throw error(errc::command_failed, "FETCH rejected: " + completion_text(responses));
    if (kind == response_kind::tagged_no)
    {
        if (ids.size() == 1)
        {
            outcome.refused[ids.front().value] = completion_text(responses);
            return;
        }
        // isolate the offending ids
        for (const auto& id : ids)
            run_batch(s, {id}, items, outcome);
        return;
    }

    for (auto& response : responses)
    {
        auto* item = std::get_if<fetch_item>(&response.payload);
        if (!item)
            continue;
        std::uint32_t key = item->sequence;
        if (by_uid)
        {
            const auto* uid = item->find("UID");
            auto number = uid ? uid->as_number() : std::nullopt;
            if (!number)
                continue;
            key = static_cast<std::uint32_t>(*number);
        }
        merge_into(outcome.items, key, std::move(*item));
    }
}

batch_outcome fetch_batch(session& s, const std::vector<message_id>& ids, const std::vector<command_arg>& items)
{
    std::vector<message_id> unique;
    for (const auto& id : ids)
        if (std::find(unique.begin(), unique.end(), id) == unique.end())
            unique.push_back(id);
    batch_outcome outcome;
    run_batch(s, unique, items, outcome);
    return outcome;
}

fetch_failure missing(const message_id& id, const batch_outcome& outcome)
{
    std::string message = "no such message: " + std::to_string(id.value);
    if (auto it = outcome.refused.find(id.value); it != outcome.refused.end() && !it->second.empty())
        message += " (" + it->second + ")";
    return {errc::no_such_message, message};
}

const imap_value* find_section(const fetch_item& item, const std::string& section)
{
    if (const auto* value = item.find("BODY[" + section + "]"))
        return value;
    // servers may echo header field lists in another spelling
    const imap_value* only = nullptr;
    int count = 0;
    for (const auto& [name, value] : item.attributes)
        if (upper(name).rfind("BODY[", 0) == 0)
        {
            only = &value;
            ++count;
        }
    return count == 1 ? only : nullptr;
}

template <typename Payload>
std::vector<fetch_result> fetch_section(session& s, const std::vector<message_id>& ids, const std::string& section,
                                        std::string_view operation)
{
    check_request(s, ids, operation);
    auto outcome = fetch_batch(s, ids, {command_arg::atom("BODY.PEEK[" + section + "]")});
    std::vector<fetch_result> results;
    results.reserve(ids.size());
    for (const auto& id : ids)
    {
        auto it = outcome.items.find(id.value);
        const imap_value* value = it == outcome.items.end() ? nullptr : find_section(it->second, section);
        if (!value)
        {
            results.push_back({id, missing(id, outcome)});
            continue;
        }
        results.push_back({id, Payload{value->as_nstring().value_or("")}});
    }
    return results;
}

bool is_field_name(std::string_view name)
{
    return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
        auto u = static_cast<unsigned char>(c);
        return u > 0x20 && u < 0x7F && c != ':' && c != '(' && c != ')' && c != '[' && c != ']' && c != '"';
    });
}

} // namespace

const std::string* fetch_result::raw_bytes() const noexcept
{
    if (const auto* body = std::get_if<body_payload>(&item))
        return &body->bytes;
    if (const auto* header = std::get_if<header_payload>(&item))
        return &header->bytes;
    if (const auto* text = std::get_if<text_payload>(&item))
        return &text->bytes;
    if (const auto* part = std::get_if<part_payload>(&item))
        return &part->bytes;
    return nullptr;
}

std::string sequence_set(const std::vector<message_id>& ids)
{
    std::string out;
    for (const auto& id : ids)
    {
        if (!out.empty())
            out += ',';
        out += std::to_string(id.value);
    }
    return out;
}

std::vector<fetch_result> fetch_body(session& s, const std::vector<message_id>& ids, std::optional<unsigned> mime_level)
{
    if (mime_level && *mime_level == 0)
        throw error(errc::invalid_argument, "MIME level starts at 1");
    return fetch_section<body_payload>(s, ids, mime_level ? std::to_string(*mime_level) : "", "fetch_body");
}

std::vector<fetch_result> fetch_header(session& s, const std::vector<message_id>& ids,
                                       const std::vector<std::string>& fields)
{
    if (fields.empty())
        return fetch_section<header_payload>(s, ids, "HEADER", "fetch_header");
    std::string section = "HEADER.FIELDS (";
    for (std::size_t i = 0; i < fields.size(); ++i)
    {
        if (!is_field_name(fields[i]))
            throw error(errc::invalid_argument, "invalid header field name \"" + sanitize_display_text(fields[i]) + "\"");
        section += (i ? " " : "") + fields[i];
    }
    section += ")";
    return fetch_section<header_payload>(s, ids, section, "fetch_header");
}

std::vector<fetch_result> fetch_text(session& s, const std::vector<message_id>& ids)
{
    return fetch_section<text_payload>(s, ids, "TEXT", "fetch_text");
}

const std::vector<std::string>& metadata_attributes()
{
    static const std::vector<std::string> names = {"ENVELOPE", "INTERNALDATE", "FLAGS", "RFC822.SIZE", "UID"};
    return names;
}

std::vector<fetch_result> fetch_metadata(session& s, const std::vector<message_id>& ids,
                                         const std::vector<std::string>& attributes)
{
    if (attributes.empty())
        throw error(errc::invalid_argument, "fetch_metadata needs at least one attribute");
    std::vector<std::string> wanted;
    for (const auto& attribute : attributes)
    {
        auto name = upper(attribute);
        const auto& known = metadata_attributes();
        if (std::find(known.begin(), known.end(), name) == known.end())
            throw error(errc::unknown_attribute, "unsupported metadata attribute \"" + sanitize_display_text(attribute) + "\"");
        if (std::find(wanted.begin(), wanted.end(), name) == wanted.end())
            wanted.push_back(name);
    }
    check_request(s, ids, "fetch_metadata");

    std::vector<command_arg> items;
    for (const auto& name : wanted)
        items.push_back(command_arg::atom(name));
    auto outcome = fetch_batch(s, ids, items);

    std::vector<fetch_result> results;
    for (const auto& id : ids)
    {
        auto it = outcome.items.find(id.value);
        if (it == outcome.items.end())
        {
            results.push_back({id, missing(id, outcome)});
            continue;
        }
        const auto& item = it->second;
        message_metadata meta;
        try
        {
            for (const auto& name : wanted)
            {
                const auto* value = item.find(name);
                if (!value)
                    throw error(errc::malformed_response, "server omitted " + name + " for message " + std::to_string(id.value));
                if (name == "ENVELOPE")
                    meta.env = parse_envelope(*value);
                else if (name == "INTERNALDATE")
                    meta.internal_date = value->as_nstring();
                else if (name == "FLAGS")
                {
                    if (!value->is_list())
                        throw error(errc::malformed_response, "FLAGS is not a list");
                    std::vector<std::string> flags;
                    for (const auto& flag : value->items)
                        flags.push_back(flag.text);
                    meta.flags = std::move(flags);
                }
                else if (name == "RFC822.SIZE")
                {
                    meta.size = value->as_number();
                    if (!meta.size)
                        throw error(errc::malformed_response, "RFC822.SIZE is not a number");
                }
                else if (name == "UID")
                {
                    auto uid = value->as_number();
                    if (!uid)
                        throw error(errc::malformed_response, "UID is not a number");
                    meta.uid = static_cast<std::uint32_t>(*uid);
                }
            }
            if (meta.env && meta.internal_date)
                meta.env->internal_date = meta.internal_date;
            results.push_back({id, std::move(meta)});
        }
        catch (const error& e)
        {
            results.push_back({id, fetch_failure{e.code(), e.what()}});
        }
    }
    return results;
}

std::vector<const body_structure_node*> attachment_parts(const body_structure_node& root)
{
    std::vector<const body_structure_node*> parts;
    static const std::map<std::string, std::string> none;
    walk(root, [&](const body_structure_node& node) {
        if (node.is_multipart())
            return;
        bool attached = node.disposition && node.disposition->kind == disposition_kind::attachment;
        if (attached || attachment_filename(node.disposition ? node.disposition->parameters : none, node.parameters))
            parts.push_back(&node);
    });
    return parts;
}

std::vector<fetch_result> fetch_attachments(session& s, const std::vector<message_id>& ids)
{
    check_request(s, ids, "fetch_attachments");
    auto structures = fetch_batch(s, ids, {command_arg::atom("BODYSTRUCTURE")});
    static const std::map<std::string, std::string> none;

    std::vector<fetch_result> results;
    for (const auto& id : ids)
    {
        auto it = structures.items.find(id.value);
        const imap_value* value = it == structures.items.end() ? nullptr : it->second.find("BODYSTRUCTURE");
        if (!value)
        {
            results.push_back({id, missing(id, structures)});
            continue;
        }
        body_structure_node root;
        try
        {
            root = parse_bodystructure(*value);
        }
        catch (const error& e)
        {
            results.push_back({id, fetch_failure{e.code(), e.what()}});
            continue;
        }
        auto parts = attachment_parts(root);
        if (parts.empty())
        {
            results.push_back({id, fetch_failure{errc::no_attachments, "message " + std::to_string(id.value) + " has no attachments"}});
            continue;
        }

        std::vector<command_arg> items;
        for (const auto* part : parts)
            items.push_back(command_arg::atom("BODY.PEEK[" + part->part_number + "]"));
        auto bodies = fetch_batch(s, {id}, items);
        auto found = bodies.items.find(id.value);
        for (const auto* part : parts)
        {
            const imap_value* bytes = found == bodies.items.end() ? nullptr : found->second.find("BODY[" + part->part_number + "]");
            if (!bytes)
            {
                results.push_back({id, fetch_failure{errc::no_such_message, "part " + part->part_number + " of message " +
                                                                                std::to_string(id.value) + " was not returned"}});
                continue;
            }
            auto name = attachment_filename(part->disposition ? part->disposition->parameters : none, part->parameters);
            results.push_back({id, part_payload{part->part_number, bytes->as_nstring().value_or(""), part->encoding,
                                                sanitize_filename(name.value_or(""), part->part_number), part->full_type()}});
        }
    }
    return results;
}

} // namespace mailpost
