#include <mailpost/transport.hpp>

#include <mailpost/error.hpp>

#include "tls_stream.hpp"

#include <openssl/err.h>
#include <openssl/x509v3.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>

#include <fcntl.h>
#include <arpa/inet.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <unistd.h>

namespace mailpost
{

namespace
{

bool iequals(std::string_view a, std::string_view b)
{
    return std::equal(a.begin(), a.end(), b.begin(), b.end(), [](char x, char y) {
        return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
    });
}

int remaining_ms(byte_stream::clock::time_point deadline)
{
    auto left = std::chrono::ceil<std::chrono::milliseconds>(deadline - byte_stream::clock::now());
    return static_cast<int>(std::max<std::chrono::milliseconds::rep>(0, left.count()));
}

} // namespace

endpoint parse_url(std::string_view url)
{
    auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos || scheme_end == 0)
        throw error(errc::malformed_url, "url lacks a scheme");
    auto scheme = url.substr(0, scheme_end);
    if (!iequals(scheme, "imaps"))
        throw error(errc::unsupported_scheme, "unsupported scheme '" + std::string(scheme) + "', only imaps is supported");

    auto rest = url.substr(scheme_end + 3);
    rest = rest.substr(0, rest.find('/'));

    endpoint result;
    std::string_view port_text;
    if (!rest.empty() && rest.front() == '[')
    {
        auto close = rest.find(']');
        if (close == std::string_view::npos)
            throw error(errc::malformed_url, "unterminated IPv6 literal");
        result.host = std::string(rest.substr(1, close - 1));
        auto after = rest.substr(close + 1);
        if (!after.empty())
        {
            if (after.front() != ':')
                throw error(errc::malformed_url, "garbage after IPv6 literal");
            port_text = after.substr(1);
            if (port_text.empty())
                throw error(errc::malformed_url, "empty port");
        }
    }
    else
    {
        auto colon = rest.find(':');
        result.host = std::string(rest.substr(0, colon));
        if (colon != std::string_view::npos)
        {
            port_text = rest.substr(colon + 1);
            if (port_text.empty())
                throw error(errc::malformed_url, "empty port");
        }
    }

    if (result.host.empty())
        throw error(errc::malformed_url, "url has an empty host");
    if (std::any_of(result.host.begin(), result.host.end(), [](unsigned char c) { return std::isspace(c) || c < 0x20; }))
        throw error(errc::malformed_url, "host contains whitespace");

    if (!port_text.empty())
    {
        unsigned value = 0;
        auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), value);
        if (ec != std::errc() || ptr != port_text.data() + port_text.size() || value < 1 || value > 65535)
            throw error(errc::malformed_url, "port must be in [1, 65535]");
        result.port = static_cast<std::uint16_t>(value);
    }
    return result;
}

// In-memory pipe

namespace
{

struct pipe_state
{
    std::mutex mutex;
    std::condition_variable ready;
    std::deque<char> queues[2];
    bool closed[2] = {false, false};
};

class memory_stream final : public byte_stream
{
public:
    memory_stream(std::shared_ptr<pipe_state> state, int side) : state_(std::move(state)), side_(side)
    {
    }

    ~memory_stream() override
    {
        close();
    }

    std::size_t read_some(char* buffer, std::size_t size, clock::time_point deadline) override
    {
        std::unique_lock lock(state_->mutex);
        auto& inbox = state_->queues[1 - side_];
        if (state_->closed[side_])
            throw error(errc::connection_closed, "stream closed");
        bool ok = state_->ready.wait_until(lock, deadline, [&] {
            return !inbox.empty() || state_->closed[1 - side_] || state_->closed[side_];
        });
        if (!ok)
            throw error(errc::read_timeout, "no data before timeout");
        if (state_->closed[side_])
            throw error(errc::connection_closed, "stream closed");
        if (inbox.empty())
            return 0;
        std::size_t count = std::min(size, inbox.size());
        std::copy_n(inbox.begin(), count, buffer);
        inbox.erase(inbox.begin(), inbox.begin() + static_cast<std::ptrdiff_t>(count));
        return count;
    }

    void write(std::string_view bytes, clock::time_point) override
    {
        std::lock_guard lock(state_->mutex);
        if (state_->closed[side_] || state_->closed[1 - side_])
            throw error(errc::connection_closed, "peer closed the stream");
        state_->queues[side_].insert(state_->queues[side_].end(), bytes.begin(), bytes.end());
        state_->ready.notify_all();
    }

    void close() noexcept override
    {
        std::lock_guard lock(state_->mutex);
        state_->closed[side_] = true;
        state_->ready.notify_all();
    }

private:
    std::shared_ptr<pipe_state> state_;
    int side_;
};

} // namespace

std::pair<std::unique_ptr<byte_stream>, std::unique_ptr<byte_stream>> make_memory_pipe()
{
    auto state = std::make_shared<pipe_state>();
    return {std::make_unique<memory_stream>(state, 0), std::make_unique<memory_stream>(state, 1)};
}

// connection

connection::connection(std::unique_ptr<byte_stream> stream, std::chrono::milliseconds timeout)
    : stream_(std::move(stream)), timeout_(timeout)
{
}

connection::~connection()
{
    close();
}

connection::connection(connection&& other) noexcept
    : stream_(std::move(other.stream_)),
      buffer_(std::move(other.buffer_)),
      consumed_(other.consumed_),
      timeout_(other.timeout_)
{
    other.consumed_ = 0;
}

connection& connection::operator=(connection&& other) noexcept
{
    if (this != &other)
    {
        close();
        stream_ = std::move(other.stream_);
        buffer_ = std::move(other.buffer_);
        consumed_ = other.consumed_;
        timeout_ = other.timeout_;
        other.consumed_ = 0;
    }
    return *this;
}

void connection::require_open() const
{
    if (!stream_)
        throw error(errc::connection_closed, "connection is closed");
}

void connection::write_all(std::string_view bytes)
{
    require_open();
    if (bytes.empty())
        return;
    stream_->write(bytes, byte_stream::clock::now() + timeout_);
}

void connection::fill(byte_stream::clock::time_point deadline)
{
    if (consumed_ > 0 && consumed_ * 2 >= buffer_.size())
    {
        buffer_.erase(0, consumed_);
        consumed_ = 0;
    }
    char chunk[16384];
    std::size_t got = stream_->read_some(chunk, sizeof chunk, deadline);
    if (got == 0)
        throw error(errc::connection_closed, "peer closed the connection");
    buffer_.append(chunk, got);
}

std::string connection::read_line()
{
    require_open();
    auto deadline = byte_stream::clock::now() + timeout_;
    std::size_t scan_from = consumed_;
    for (;;)
    {
        auto pos = buffer_.find("\r\n", scan_from);
        if (pos != std::string::npos)
        {
            std::string line = buffer_.substr(consumed_, pos + 2 - consumed_);
            consumed_ = pos + 2;
            return line;
        }
        std::size_t unread = buffer_.size() - consumed_;
        fill(deadline);
        // fill may compact the buffer; resume the scan one byte early in case CR ended the old data
        scan_from = consumed_ + (unread > 0 ? unread - 1 : 0);
    }
}

std::string connection::read_exact(std::size_t count)
{
    require_open();
    auto deadline = byte_stream::clock::now() + timeout_;
    while (buffer_.size() - consumed_ < count)
        fill(deadline);
    std::string bytes = buffer_.substr(consumed_, count);
    consumed_ += count;
    return bytes;
}

void connection::close() noexcept
{
    if (stream_)
    {
        stream_->close();
        stream_.reset();
    }
    buffer_.clear();
    consumed_ = 0;
}

// TLS

namespace detail
{

std::string openssl_error_text(const char* fallback)
{
    unsigned long code = ERR_get_error();
    ERR_clear_error();
    if (code == 0)
        return fallback;
    char text[256];
    ERR_error_string_n(code, text, sizeof text);
    return text;
}

int tcp_connect(const endpoint& target, byte_stream::clock::time_point deadline)
{
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* found = nullptr;
    std::string port = std::to_string(target.port);
    int rc = ::getaddrinfo(target.host.c_str(), port.c_str(), &hints, &found);
    if (rc != 0)
        throw error(errc::refused, "cannot resolve " + target.host + ": " + ::gai_strerror(rc));
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(found, &::freeaddrinfo);

    bool timed_out = false;
    std::string last_error = "no address";
    for (addrinfo* ai = found; ai != nullptr; ai = ai->ai_next)
    {
        int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, ai->ai_protocol);
        if (fd < 0)
            continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0)
            return fd;
        if (errno == EINPROGRESS)
        {
            pollfd pfd{fd, POLLOUT, 0};
            int ready = ::poll(&pfd, 1, remaining_ms(deadline));
            if (ready == 0)
            {
                timed_out = true;
                ::close(fd);
                break;
            }
            int so_error = 0;
            socklen_t len = sizeof so_error;
            ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &so_error, &len);
            if (ready > 0 && so_error == 0)
                return fd;
            last_error = std::strerror(so_error != 0 ? so_error : errno);
        }
        else
            last_error = std::strerror(errno);
        ::close(fd);
    }
    if (timed_out)
        throw error(errc::connect_timeout, "timed out connecting to " + target.host);
    throw error(errc::refused, "cannot connect to " + target.host + ": " + last_error);
}

tls_stream::tls_stream(int fd, SSL_CTX* ctx, role side, const std::string& server_name, clock::time_point deadline)
    : fd_(fd), ssl_(SSL_new(ctx))
{
    // a peer reset must surface as an error, not kill the process
    static const bool sigpipe_ignored = [] {
        ::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)sigpipe_ignored;
    if (!ssl_)
    {
        ::close(fd_);
        throw error(errc::tls_failure, openssl_error_text("SSL_new failed"));
    }
    SSL_set_fd(ssl_.get(), fd_);
    if (side == role::client)
    {
        SSL_set_connect_state(ssl_.get());
        if (!server_name.empty())
        {
            in6_addr probe{};
            bool literal_ip = ::inet_pton(AF_INET, server_name.c_str(), &probe) == 1 ||
                              ::inet_pton(AF_INET6, server_name.c_str(), &probe) == 1;
            if (literal_ip)
                X509_VERIFY_PARAM_set1_ip_asc(SSL_get0_param(ssl_.get()), server_name.c_str());
            else
            {
                SSL_set_tlsext_host_name(ssl_.get(), server_name.c_str());
                SSL_set1_host(ssl_.get(), server_name.c_str());
            }
        }
    }
    else
        SSL_set_accept_state(ssl_.get());

    for (;;)
    {
        ERR_clear_error();
        int rc = SSL_do_handshake(ssl_.get());
        if (rc == 1)
            break;
        int err = SSL_get_error(ssl_.get(), rc);
        if (err == SSL_ERROR_WANT_READ || err == SSL_ERROR_WANT_WRITE)
        {
            try
            {
                wait_io(err, deadline, true);
            }
            catch (...)
            {
                ssl_.reset();
                ::close(fd_);
                throw;
            }
            continue;
        }
        std::string reason;
        errc code = errc::tls_failure;
        if ((err == SSL_ERROR_SYSCALL || err == SSL_ERROR_ZERO_RETURN) && ERR_peek_error() == 0)
        {
            code = errc::refused;
            reason = "peer closed the connection during the TLS handshake";
        }
        else
        {
            long verify = SSL_get_verify_result(ssl_.get());
            reason = verify != X509_V_OK ? std::string("certificate verification failed: ") + X509_verify_cert_error_string(verify)
                                         : openssl_error_text("handshake failed");
        }
        ssl_.reset();
        ::close(fd_);
        throw error(code, reason);
    }
}

tls_stream::~tls_stream()
{
    close();
}

void tls_stream::wait_io(int ssl_error, clock::time_point deadline, bool handshake) const
{
    pollfd pfd{fd_, static_cast<short>(ssl_error == SSL_ERROR_WANT_WRITE ? POLLOUT : POLLIN), 0};
    int ready = ::poll(&pfd, 1, remaining_ms(deadline));
    if (ready == 0)
        throw error(handshake ? errc::connect_timeout : errc::read_timeout, handshake ? "TLS handshake timed out" : "no data before timeout");
    if (ready < 0 && errno != EINTR)
        throw error(errc::connection_closed, std::strerror(errno));
}

std::size_t tls_stream::read_some(char* buffer, std::size_t size, clock::time_point deadline)
{
    if (!ssl_)
        throw error(errc::connection_closed, "stream closed");
    for (;;)
    {
        ERR_clear_error();
        int rc = SSL_read(ssl_.get(), buffer, static_cast<int>(std::min<std::size_t>(size, 1 << 30)));
        if (rc > 0)
            return static_cast<std::size_t>(rc);
        int err = SSL_get_error(ssl_.get(), rc);
        if (err == SSL_ERROR_WANT_READ || err == SSL_ERROR_WANT_WRITE)
        {
            wait_io(err, deadline, false);
            continue;
        }
        if (err == SSL_ERROR_ZERO_RETURN || err == SSL_ERROR_SYSCALL)
            return 0;
        throw error(errc::tls_failure, openssl_error_text("read failed"));
    }
}

void tls_stream::write(std::string_view bytes, clock::time_point deadline)
{
    if (!ssl_)
        throw error(errc::connection_closed, "stream closed");
    while (!bytes.empty())
    {
        ERR_clear_error();
        int rc = SSL_write(ssl_.get(), bytes.data(), static_cast<int>(std::min<std::size_t>(bytes.size(), 1 << 30)));
        if (rc > 0)
        {
            bytes.remove_prefix(static_cast<std::size_t>(rc));
            continue;
        }
        int err = SSL_get_error(ssl_.get(), rc);
        if (err == SSL_ERROR_WANT_READ || err == SSL_ERROR_WANT_WRITE)
        {
            try
            {
                wait_io(err, deadline, false);
            }
            catch (const error& e)
            {
                if (e.code() == errc::read_timeout)
                    throw error(errc::connection_closed, "write timed out");
                throw;
            }
            continue;
        }
        throw error(errc::connection_closed, openssl_error_text("write failed"));
    }
}

void tls_stream::close() noexcept
{
    if (ssl_)
    {
        SSL_shutdown(ssl_.get());
        ssl_.reset();
        ::close(fd_);
    }
}

} // namespace detail

connection connect(const endpoint& target, std::chrono::milliseconds timeout, const tls_options& tls)
{
    auto deadline = byte_stream::clock::now() + timeout;

    detail::ssl_ctx_ptr ctx(SSL_CTX_new(TLS_client_method()));
    if (!ctx)
        throw error(errc::tls_failure, detail::openssl_error_text("cannot create TLS context"));
    SSL_CTX_set_min_proto_version(ctx.get(), TLS1_2_VERSION);
    if (tls.verify_peer)
    {
        SSL_CTX_set_verify(ctx.get(), SSL_VERIFY_PEER, nullptr);
        SSL_CTX_set_default_verify_paths(ctx.get());
        if (!tls.ca_file.empty() && SSL_CTX_load_verify_locations(ctx.get(), tls.ca_file.c_str(), nullptr) != 1)
            throw error(errc::tls_failure, "cannot load CA file " + tls.ca_file);
    }
    else
        SSL_CTX_set_verify(ctx.get(), SSL_VERIFY_NONE, nullptr);

    int fd = detail::tcp_connect(target, deadline);
    auto stream = std::make_unique<detail::tls_stream>(fd, ctx.get(), detail::tls_stream::role::client,
                                                       tls.verify_peer ? target.host : std::string(), deadline);
    return connection(std::move(stream), timeout);
}

connector tls_connector(tls_options tls)
{
    return [tls = std::move(tls)](const endpoint& target, std::chrono::milliseconds timeout) {
        return connect(target, timeout, tls);
    };
}

} // namespace mailpost
