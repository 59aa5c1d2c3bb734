#include <mailpost/error.hpp>
#include <mailpost/mockserver.hpp>

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

namespace
{

volatile std::sig_atomic_t stop_requested = 0;

void on_signal(int)
{
    stop_requested = 1;
}

} // namespace

int main(int argc, char** argv)
{
    std::string fixtures;
    std::string cert_out;
    std::string user;
    std::string password;
    std::string token;
    std::uint16_t port = 0;
    bool no_within = false;
    bool preauth = false;

    CLI::App app{"Serves a fixture directory as an IMAP server over TLS on 127.0.0.1", "mailpost-mock"};
    app.add_option("--fixtures", fixtures, "Directory with manifest.json")->required();
    app.add_option("--cert-out", cert_out, "Write the server certificate (PEM) here");
    app.add_option("--port", port, "Port to listen on; 0 picks a free one");
    app.add_option("--user", user, "Accepted login name");
    app.add_option("--password", password, "Accepted password");
    app.add_option("--token", token, "Accepted XOAUTH2 bearer token");
    app.add_flag("--no-within", no_within, "Do not advertise WITHIN");
    app.add_flag("--preauth", preauth, "Greet with PREAUTH");
    CLI11_PARSE(app, argc, argv);

    try
    {
        mailpost::mock::server_options options;
        options.within = !no_within;
        if (preauth)
            options.greeting = mailpost::mock::greeting_kind::preauth;
        if (!user.empty())
            options.username = user;
        if (!password.empty())
            options.password = password;
        if (!token.empty())
            options.bearer_token = token;
        auto server = mailpost::mock::server::start_stateful(mailpost::mock::load_fixtures(fixtures), options);
        if (!cert_out.empty())
        {
            std::ofstream pem(cert_out, std::ios::binary | std::ios::trunc);
            pem << mailpost::mock::server::certificate_pem();
            if (!pem)
                throw mailpost::error(mailpost::errc::io_error, "cannot write " + cert_out);
        }
        auto bound = server->listen_tls(port);
        std::cout << bound << std::endl;

        std::signal(SIGTERM, on_signal);
        std::signal(SIGINT, on_signal);
        while (!stop_requested)
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        server->stop();
    }
    catch (const std::exception& e)
    {
        std::cerr << "mailpost-mock: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
