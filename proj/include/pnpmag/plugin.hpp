#pragma once

// External denoiser client speaking the DNRQ/DNRS protocol over a byte
// stream: either the stdio of a spawned child process or a TCP connection.
//
//   request : "DNRQ" u32 nx ny nz  f32 noise_level  f32[nx*ny*nz] magnitudes
//   response: "DNRS" u32 nx ny nz  f32[nx*ny*nz]
//
// All integers and floats little-endian, voxels x-fastest. Requests and
// responses strictly alternate; anything else is a protocol error.

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <regex>
#include <string>
#include <vector>

#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "core.hpp"
#include "denoise.hpp"
#include "io.hpp"

namespace pnpmag {

inline constexpr char kPluginEnvVar[] = "PNPMAG_PLUGIN";

inline std::vector<std::uint8_t> encode_denoise_request(const MagnitudeVolume& m, float noise_level) {
    ByteWriter w;
    w.raw("DNRQ", 4);
    w.u32(static_cast<std::uint32_t>(m.dims().nx));
    w.u32(static_cast<std::uint32_t>(m.dims().ny));
    w.u32(static_cast<std::uint32_t>(m.dims().nz));
    w.f32(noise_level);
    for (double v : m.values()) w.f32(static_cast<float>(v));
    return w.bytes();
}

inline std::vector<std::uint8_t> encode_denoise_response(const Dims& d, std::span<const float> values) {
    ByteWriter w;
    w.raw("DNRS", 4);
    w.u32(static_cast<std::uint32_t>(d.nx));
    w.u32(static_cast<std::uint32_t>(d.ny));
    w.u32(static_cast<std::uint32_t>(d.nz));
    for (float v : values) w.f32(v);
    return w.bytes();
}

/// Owns one byte-stream connection to a denoiser process.
class PluginConnection {
public:
    explicit PluginConnection(const std::string& endpoint,
                              std::chrono::milliseconds timeout = std::chrono::seconds(300))
        : timeout_(timeout) {
        static const std::regex host_port(R"(^([A-Za-z0-9_.\-]+|\[[0-9A-Fa-f:]+\]):([0-9]{1,5})$)");
        std::smatch match;
        if (std::regex_match(endpoint, match, host_port))
            connect_tcp(match[1].str(), match[2].str());
        else
            spawn(endpoint);
    }

    PluginConnection(const PluginConnection&) = delete;
    PluginConnection& operator=(const PluginConnection&) = delete;

    ~PluginConnection() {
        if (fd_ >= 0) ::close(fd_);
        if (child_ > 0) {
            int status = 0;
            // Closing stdin is the shutdown signal; give the child a moment, then kill.
            for (int i = 0; i < 50; ++i) {
                if (::waitpid(child_, &status, WNOHANG) == child_) return;
                ::usleep(10000);
            }
            ::kill(child_, SIGTERM);
            ::waitpid(child_, &status, 0);
        }
    }

    void write_all(std::span<const std::uint8_t> bytes) {
        std::size_t off = 0;
        while (off < bytes.size()) {
            wait_ready(POLLOUT);
            const ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw ProtocolError(std::string("plugin write failed: ") + std::strerror(errno));
            }
            off += static_cast<std::size_t>(n);
        }
    }

    void read_exact(std::span<std::uint8_t> out) {
        std::size_t off = 0;
        while (off < out.size()) {
            wait_ready(POLLIN);
            const ssize_t n = ::recv(fd_, out.data() + off, out.size() - off, 0);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw ProtocolError(std::string("plugin read failed: ") + std::strerror(errno));
            }
            if (n == 0) throw ProtocolError("plugin closed the connection");
            off += static_cast<std::size_t>(n);
        }
    }

private:
    void wait_ready(short events) {
        pollfd p{fd_, events, 0};
        for (;;) {
            const int r = ::poll(&p, 1, static_cast<int>(timeout_.count()));
            if (r > 0) return;
            if (r == 0) throw ProtocolError("plugin timed out");
            if (errno != EINTR) throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
        }
    }

    void connect_tcp(const std::string& host_in, const std::string& port) {
        std::string host = host_in;
        if (host.size() > 2 && host.front() == '[') host = host.substr(1, host.size() - 2);
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
            throw IoError("cannot resolve plugin host " + host + ": " + ::gai_strerror(rc));
        for (addrinfo* a = res; a; a = a->ai_next) {
            const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
            if (fd < 0) continue;
            if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
                fd_ = fd;
                break;
            }
            ::close(fd);
        }
        ::freeaddrinfo(res);
        if (fd_ < 0) throw IoError("cannot connect to plugin at " + host + ":" + port);
    }

    // The child's stdin and stdout are both one end of a socketpair.
    void spawn(const std::string& command) {
        int sv[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0)
            throw IoError(std::string("socketpair failed: ") + std::strerror(errno));
        const pid_t pid = ::fork();
        if (pid < 0) {
            ::close(sv[0]);
            ::close(sv[1]);
            throw IoError(std::string("fork failed: ") + std::strerror(errno));
        }
        if (pid == 0) {
            ::dup2(sv[1], STDIN_FILENO);
            ::dup2(sv[1], STDOUT_FILENO);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(sv[1]);
        fd_ = sv[0];
        child_ = pid;
    }

    int fd_ = -1;
    pid_t child_ = -1;
    std::chrono::milliseconds timeout_;
};

/// Denoiser backed by an external process. Inputs are divided by their max
/// before sending and multiplied back afterwards; all-zero inputs skip the
/// plugin. denoise(m, alpha) sends sqrt(alpha) as the noise level.
class ExternalDenoiser final : public MagnitudeDenoiser {
public:
    explicit ExternalDenoiser(const std::string& endpoint,
                              std::chrono::milliseconds timeout = std::chrono::seconds(300))
        : endpoint_(endpoint), conn_(endpoint, timeout) {}

    [[nodiscard]] DenoiserKind kind() const override { return DenoiserKind::external; }
    [[nodiscard]] const std::string& endpoint() const { return endpoint_; }

    MagnitudeVolume denoise(const MagnitudeVolume& m, double alpha) override {
        if (!(alpha >= 0)) throw ArgumentError("external denoiser: alpha must be >= 0");
        return denoise_with_noise_level(m, std::sqrt(alpha));
    }

    MagnitudeVolume denoise_with_noise_level(const MagnitudeVolume& m, double noise_level) {
        const double peak = max_value(m.values());
        if (!(peak > 0)) return MagnitudeVolume(m.grid());
        MagnitudeVolume scaled(m.grid());
        for (std::size_t n = 0; n < m.size(); ++n) scaled[n] = m[n] / peak;
        MagnitudeVolume out = round_trip(scaled, static_cast<float>(noise_level));
        for (double& v : out.values()) v = std::max(v, 0.0) * peak;
        return out;
    }

    /// One raw protocol exchange, no scaling or clamping.
    MagnitudeVolume round_trip(const MagnitudeVolume& m, float noise_level) {
        conn_.write_all(encode_denoise_request(m, noise_level));
        std::uint8_t header[16];
        conn_.read_exact(header);
        if (std::memcmp(header, "DNRS", 4) != 0) throw ProtocolError("plugin response has bad magic");
        ByteReader r({header + 4, 12});
        const Dims d{r.u32(), r.u32(), r.u32()};
        if (d != m.dims())
            throw ProtocolError("plugin returned dims " + to_string(d) + ", expected " + to_string(m.dims()));
        std::vector<std::uint8_t> payload(m.size() * 4);
        conn_.read_exact(payload);
        ByteReader pr(payload);
        MagnitudeVolume out(m.grid());
        for (std::size_t n = 0; n < m.size(); ++n) out[n] = pr.f32();
        return out;
    }

private:
    std::string endpoint_;
    PluginConnection conn_;
};

/// Client-side plugin call with an explicit noise level.
inline MagnitudeVolume denoise_external(ExternalDenoiser& plugin, const MagnitudeVolume& m,
                                        double noise_level) {
    return plugin.denoise_with_noise_level(m, noise_level);
}

}  // namespace pnpmag
