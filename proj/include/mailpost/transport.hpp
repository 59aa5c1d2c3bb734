#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <utility>

namespace mailpost
{

/// Default per-operation network budget.
inline constexpr std::chrono::milliseconds default_timeout{10000};

struct endpoint
{
    std::string host;
    std::uint16_t port = 993;
    bool use_tls = true;

    friend bool operator==(const endpoint&, const endpoint&) = default;
};

/**
Parses an `imaps://host[:port][/]` URL.

@throw error  `unsupported_scheme` for any scheme but `imaps`, `malformed_url` for an empty host, whitespace in the
              host, or a port outside [1, 65535].
**/
endpoint parse_url(std::string_view url);

/**
Raw duplex byte stream underneath a connection.

`read_some` returns 0 on orderly close and throws `read_timeout` when nothing arrives before the deadline.
**/
class byte_stream
{
public:
    using clock = std::chrono::steady_clock;

    virtual ~byte_stream() = default;

    virtual std::size_t read_some(char* buffer, std::size_t size, clock::time_point deadline) = 0;
    virtual void write(std::string_view bytes, clock::time_point deadline) = 0;
    virtual void close() noexcept = 0;
};

/// Two connected in-memory stream ends; bytes written to one are read from the other.
std::pair<std::unique_ptr<byte_stream>, std::unique_ptr<byte_stream>> make_memory_pipe();

/**
A single-owner connection with line and literal oriented reads.

Buffering hides stream fragmentation: `read_line` only ever returns complete CRLF-terminated lines.
**/
class connection
{
public:
    connection(std::unique_ptr<byte_stream> stream, std::chrono::milliseconds timeout);
    ~connection();

    connection(const connection&) = delete;
    connection& operator=(const connection&) = delete;
    connection(connection&&) noexcept;
    connection& operator=(connection&&) noexcept;

    void write_all(std::string_view bytes);

    /// One line including its terminating CRLF.
    std::string read_line();

    std::string read_exact(std::size_t count);

    void close() noexcept;

    [[nodiscard]] bool is_open() const noexcept
    {
        return stream_ != nullptr;
    }

    [[nodiscard]] std::chrono::milliseconds timeout() const noexcept
    {
        return timeout_;
    }

    void set_timeout(std::chrono::milliseconds timeout) noexcept
    {
        timeout_ = timeout;
    }

private:
    void fill(byte_stream::clock::time_point deadline);
    void require_open() const;

    std::unique_ptr<byte_stream> stream_;
    std::string buffer_;
    std::size_t consumed_ = 0;
    std::chrono::milliseconds timeout_;
};

struct tls_options
{
    bool verify_peer = true;
    /// Extra PEM file with trusted certificates, used in addition to the system store.
    std::string ca_file;
};

/**
Opens a TCP connection and completes a TLS handshake.

The server greeting is left unread.

@throw error  `connect_timeout`, `refused`, or `tls_failure`.
**/
connection connect(const endpoint& target, std::chrono::milliseconds timeout, const tls_options& tls = {});

/// Produces a fresh connection for a session; replaced by the mock server in tests.
using connector = std::function<connection(const endpoint&, std::chrono::milliseconds)>;

connector tls_connector(tls_options tls);

} // namespace mailpost
