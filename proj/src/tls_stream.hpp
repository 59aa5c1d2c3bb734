#pragma once

// Internal: OpenSSL-backed stream shared by the client connector and the loopback mock server.

#include <mailpost/transport.hpp>

#include <openssl/ssl.h>

#include <memory>
#include <string>

namespace mailpost::detail
{

struct ssl_ctx_deleter
{
    void operator()(SSL_CTX* ctx) const noexcept
    {
        SSL_CTX_free(ctx);
    }
};

struct ssl_deleter
{
    void operator()(SSL* ssl) const noexcept
    {
        SSL_free(ssl);
    }
};

using ssl_ctx_ptr = std::unique_ptr<SSL_CTX, ssl_ctx_deleter>;
using ssl_ptr = std::unique_ptr<SSL, ssl_deleter>;

/// Owns a connected non-blocking socket and the TLS state on top of it.
class tls_stream final : public byte_stream
{
public:
    enum class role
    {
        client,
        server
    };

    /// Takes ownership of `fd`; performs the handshake before returning.
    tls_stream(int fd, SSL_CTX* ctx, role side, const std::string& server_name, clock::time_point deadline);
    ~tls_stream() override;

    std::size_t read_some(char* buffer, std::size_t size, clock::time_point deadline) override;
    void write(std::string_view bytes, clock::time_point deadline) override;
    void close() noexcept override;

private:
    /// Waits for the socket to become readable or writable as OpenSSL requested.
    void wait_io(int ssl_error, clock::time_point deadline, bool handshake) const;

    int fd_;
    ssl_ptr ssl_;
};

/// Last queued OpenSSL error as text, or `fallback` when the queue is empty.
std::string openssl_error_text(const char* fallback);

/// Creates a non-blocking socket connected to `target`.
int tcp_connect(const endpoint& target, byte_stream::clock::time_point deadline);

} // namespace mailpost::detail
