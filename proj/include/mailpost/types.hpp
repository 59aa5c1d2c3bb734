#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mailpost
{

enum class id_kind
{
    uid,
    sequence_number
};

/// A message identifier; `value` is always >= 1.
struct message_id
{
    std::uint32_t value = 0;
    id_kind kind = id_kind::uid;

    friend bool operator==(const message_id&, const message_id&) = default;
};

enum class transfer_encoding
{
    seven_bit,
    eight_bit,
    binary,
    quoted_printable,
    base64
};

/// Case-insensitive parse of a Content-Transfer-Encoding token; unknown tokens map to `binary` (no decoding).
transfer_encoding parse_transfer_encoding(std::string_view token);

std::string_view to_string(transfer_encoding encoding);

} // namespace mailpost
