#include "cohrt/net.hpp"

#include <chrono>
#include <deque>
#include <iostream>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace cohrt::net {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using error_code = boost::system::error_code;

namespace {

/// Plain TCP client connection: newline-delimited frames both ways.
class tcp_session : public std::enable_shared_from_this<tcp_session> {
public:
    tcp_session(tcp::socket socket, server::coordinator& coord, std::size_t max_frame)
        : socket_(std::move(socket)), strand_(socket_.get_executor()), coord_(coord),
          max_frame_(max_frame) {}

    void start() {
        std::weak_ptr<tcp_session> weak = shared_from_this();
        server::client_sink sink;
        sink.send = [weak](const std::string& frame) {
            auto self = weak.lock();
            if (!self || self->closed_) return false;
            self->queue(frame);
            return true;
        };
        sink.close = [weak] {
            if (auto self = weak.lock()) asio::post(self->strand_, [self] { self->close(); });
        };
        id_ = coord_.connect(std::move(sink));
        read();
    }

private:
    void read() {
        auto self = shared_from_this();
        socket_.async_read_some(asio::buffer(buf_), asio::bind_executor(strand_, [self](error_code ec, std::size_t n) {
                                    if (ec) return self->close();
                                    self->splitter_.feed(std::string_view(self->buf_.data(), n));
                                    while (auto frame = self->splitter_.next_frame()) {
                                        self->coord_.receive(self->id_, *frame);
                                    }
                                    if (self->splitter_.buffered() > self->max_frame_) return self->close();
                                    self->read();
                                }));
    }

    void queue(const std::string& frame) {
        auto self = shared_from_this();
        asio::post(strand_, [self, frame] {
            if (self->closed_) return;
            self->out_.push_back(frame);
            if (self->out_.size() == 1) self->write();
        });
    }

    void write() {
        auto self = shared_from_this();
        asio::async_write(socket_, asio::buffer(out_.front()), asio::bind_executor(strand_, [self](error_code ec, std::size_t) {
                              if (ec) return self->close();
                              self->out_.pop_front();
                              if (!self->out_.empty()) self->write();
                          }));
    }

    void close() {
        if (closed_) return;
        closed_ = true;
        error_code ignored;
        socket_.shutdown(tcp::socket::shutdown_both, ignored);
        socket_.close(ignored);
        coord_.disconnect(id_);
    }

    tcp::socket socket_;
    tcp::socket::executor_type strand_;  // sockets are accepted on a strand
    server::coordinator& coord_;
    std::size_t max_frame_;
    server::connection_id id_ = 0;
    std::array<char, 4096> buf_{};
    protocol::frame_splitter splitter_;
    std::deque<std::string> out_;
    std::atomic<bool> closed_{false};
};

/// Browser-facing endpoint: one frame per text message, same bytes as TCP.
class ws_session : public std::enable_shared_from_this<ws_session> {
public:
    ws_session(tcp::socket socket, server::coordinator& coord, std::size_t max_frame)
        : ws_(std::move(socket)), strand_(ws_.get_executor()), coord_(coord), max_frame_(max_frame) {}

    void start() {
        auto self = shared_from_this();
        http::async_read(ws_.next_layer(), http_buf_, request_,
                         asio::bind_executor(strand_, [self](error_code ec, std::size_t) { self->on_request(ec); }));
    }

private:
    void on_request(error_code ec) {
        if (ec) return;
        if (!websocket::is_upgrade(request_) || request_.target() != k_ws_path) {
            auto res = std::make_shared<http::response<http::string_body>>(http::status::not_found, request_.version());
            res->set(http::field::content_type, "text/plain");
            res->body() = "websocket endpoint is " + std::string(k_ws_path) + "\n";
            res->prepare_payload();
            auto self = shared_from_this();
            http::async_write(ws_.next_layer(), *res, asio::bind_executor(strand_, [self, res](error_code, std::size_t) {
                                  error_code ignored;
                                  self->ws_.next_layer().shutdown(tcp::socket::shutdown_both, ignored);
                              }));
            return;
        }
        ws_.read_message_max(max_frame_);
        auto self = shared_from_this();
        ws_.async_accept(request_, asio::bind_executor(strand_, [self](error_code ec) {
                             if (ec) return;
                             self->opened();
                         }));
    }

    void opened() {
        ws_.text(true);
        std::weak_ptr<ws_session> weak = shared_from_this();
        server::client_sink sink;
        sink.send = [weak](const std::string& frame) {
            auto self = weak.lock();
            if (!self || self->closed_) return false;
            self->queue(frame);
            return true;
        };
        sink.close = [weak] {
            if (auto self = weak.lock()) asio::post(self->strand_, [self] { self->close(); });
        };
        id_ = coord_.connect(std::move(sink));
        open_ = true;
        read();
    }

    void read() {
        auto self = shared_from_this();
        ws_.async_read(in_, asio::bind_executor(strand_, [self](error_code ec, std::size_t) {
                           if (ec) return self->close();
                           auto text = beast::buffers_to_string(self->in_.data());
                           self->in_.consume(self->in_.size());
                           if (text.empty() || text.back() != '\n') text.push_back('\n');
                           self->splitter_.feed(text);
                           while (auto frame = self->splitter_.next_frame()) {
                               self->coord_.receive(self->id_, *frame);
                           }
                           self->read();
                       }));
    }

    void queue(const std::string& frame) {
        auto self = shared_from_this();
        asio::post(strand_, [self, frame] {
            if (self->closed_) return;
            self->out_.push_back(frame);
            if (self->out_.size() == 1) self->write();
        });
    }

    void write() {
        auto self = shared_from_this();
        ws_.async_write(asio::buffer(out_.front()), asio::bind_executor(strand_, [self](error_code ec, std::size_t) {
                            if (ec) return self->close();
                            self->out_.pop_front();
                            if (!self->out_.empty()) self->write();
                        }));
    }

    void close() {
        if (closed_) return;
        closed_ = true;
        error_code ignored;
        ws_.next_layer().shutdown(tcp::socket::shutdown_both, ignored);
        ws_.next_layer().close(ignored);
        if (open_) coord_.disconnect(id_);
    }

    websocket::stream<tcp::socket> ws_;
    tcp::socket::executor_type strand_;  // sockets are accepted on a strand
    server::coordinator& coord_;
    std::size_t max_frame_;
    beast::flat_buffer http_buf_;
    http::request<http::string_body> request_;
    beast::flat_buffer in_;
    server::connection_id id_ = 0;
    bool open_ = false;
    protocol::frame_splitter splitter_;
    std::deque<std::string> out_;
    std::atomic<bool> closed_{false};
};

} // namespace

// ---------------------------------------------------------------- server

struct session_server::impl {
    impl(server::coordinator& c, listen_options o, unsigned n)
        : coord(c), options(std::move(o)), threads(n == 0 ? 1 : n), tcp_acceptor(io), ws_acceptor(io), ticker(io) {}

    void listen(tcp::acceptor& acceptor, std::uint16_t port) {
        tcp::endpoint ep(asio::ip::make_address(options.address), port);
        acceptor.open(ep.protocol());
        acceptor.set_option(asio::socket_base::reuse_address(true));
        acceptor.bind(ep);
        acceptor.listen();
    }

    void accept_tcp() {
        tcp_acceptor.async_accept(asio::make_strand(io), [this](error_code ec, tcp::socket s) {
            if (ec) return;
            s.set_option(tcp::no_delay(true));
            std::make_shared<tcp_session>(std::move(s), coord, options.max_frame_bytes)->start();
            accept_tcp();
        });
    }

    void accept_ws() {
        ws_acceptor.async_accept(asio::make_strand(io), [this](error_code ec, tcp::socket s) {
            if (ec) return;
            s.set_option(tcp::no_delay(true));
            std::make_shared<ws_session>(std::move(s), coord, options.max_frame_bytes)->start();
            accept_ws();
        });
    }

    void tick() {
        ticker.expires_after(std::chrono::milliseconds(options.tick_ms));
        ticker.async_wait([this](error_code ec) {
            if (ec) return;
            coord.tick();
            tick();
        });
    }

    server::coordinator& coord;
    listen_options options;
    unsigned threads;
    asio::io_context io;
    tcp::acceptor tcp_acceptor;
    tcp::acceptor ws_acceptor;
    asio::steady_timer ticker;
    std::vector<std::thread> pool;
    bool running = false;
};

session_server::session_server(server::coordinator& coord, listen_options options, unsigned threads)
    : impl_(std::make_unique<impl>(coord, std::move(options), threads)) {}

session_server::~session_server() { stop(); }

void session_server::start() {
    if (impl_->running) return;
    impl_->listen(impl_->tcp_acceptor, impl_->options.tcp_port);
    impl_->listen(impl_->ws_acceptor, impl_->options.ws_port);
    impl_->accept_tcp();
    impl_->accept_ws();
    impl_->tick();
    impl_->running = true;
    for (unsigned i = 0; i < impl_->threads; ++i) {
        impl_->pool.emplace_back([this] { impl_->io.run(); });
    }
}

void session_server::stop() {
    if (!impl_ || !impl_->running) return;
    impl_->running = false;
    impl_->io.stop();
    for (auto& t : impl_->pool) t.join();
    impl_->pool.clear();
}

std::uint16_t session_server::tcp_port() const { return impl_->tcp_acceptor.local_endpoint().port(); }
std::uint16_t session_server::ws_port() const { return impl_->ws_acceptor.local_endpoint().port(); }

// ---------------------------------------------------------------- client host

struct tcp_agent_host::impl {
    impl(agents::protocol_agent& a, std::string h, std::uint16_t p)
        : agent(a), host(std::move(h)), port(p), socket(io), epoch(std::chrono::steady_clock::now()) {}

    void read() {
        socket.async_read_some(asio::buffer(buf), [this](error_code ec, std::size_t n) {
            if (ec) return finish();
            splitter.feed(std::string_view(buf.data(), n));
            while (auto frame = splitter.next_frame()) {
                auto m = protocol::decode_message(*frame);
                if (!m) {
                    std::cerr << "dropping undecodable frame: " << protocol::to_string(m.error().failure) << '\n';
                    continue;
                }
                const bool over = std::holds_alternative<protocol::msg::session_end>(m->body);
                agent.on_message(*m);
                if (over) return finish();
            }
            read();
        });
    }

    void write() {
        asio::async_write(socket, asio::buffer(out.front()), [this](error_code ec, std::size_t) {
            if (ec) return finish();
            out.pop_front();
            if (!out.empty()) write();
        });
    }

    void finish() {
        if (done) return;
        done = true;
        agent.on_disconnected();
        // Let queued frames drain before closing.
        if (out.empty()) {
            error_code ignored;
            socket.close(ignored);
            io.stop();
        } else {
            asio::post(io, [this] { io.stop(); });
        }
    }

    agents::protocol_agent& agent;
    std::string host;
    std::uint16_t port;
    asio::io_context io;
    tcp::socket socket;
    std::chrono::steady_clock::time_point epoch;
    std::array<char, 4096> buf{};
    protocol::frame_splitter splitter;
    std::deque<std::string> out;
    std::uint64_t seq = 0;
    bool done = false;
};

tcp_agent_host::tcp_agent_host(agents::protocol_agent& agent, std::string host, std::uint16_t port)
    : impl_(std::make_unique<impl>(agent, std::move(host), port)) {
    agent.attach(*this);
}

tcp_agent_host::~tcp_agent_host() = default;

void tcp_agent_host::run() {
    tcp::resolver resolver(impl_->io);
    asio::connect(impl_->socket, resolver.resolve(impl_->host, std::to_string(impl_->port)));
    impl_->socket.set_option(tcp::no_delay(true));
    send(impl_->agent.hello());
    impl_->agent.on_connected();
    impl_->read();
    impl_->io.run();
}

void tcp_agent_host::stop() {
    asio::post(impl_->io, [this] { impl_->finish(); });
}

time_ms tcp_agent_host::now_ms() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - impl_->epoch).count();
}

void tcp_agent_host::send(protocol::payload body) {
    if (impl_->done) return;
    auto m = protocol::message{static_cast<protocol::message_kind>(body.index()), ++impl_->seq, now_ms(), std::move(body)};
    impl_->out.push_back(protocol::encode_message(m));
    if (impl_->out.size() == 1) impl_->write();
}

void tcp_agent_host::schedule(time_ms delay, std::function<void()> fn) {
    auto timer = std::make_shared<asio::steady_timer>(impl_->io, std::chrono::milliseconds(delay));
    timer->async_wait([this, timer, fn = std::move(fn)](error_code ec) {
        if (!ec && !impl_->done) fn();
    });
}

} // namespace cohrt::net
