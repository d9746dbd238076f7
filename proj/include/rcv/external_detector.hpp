#pragma once

#include <fcntl.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rcv/detect.hpp"
#include "rcv/error.hpp"
#include "rcv/io/png.hpp"
#include "rcv/protocol.hpp"

namespace rcv {

/// Child process speaking the line protocol on stdin/stdout. Requests are
/// serialized; images are handed over as PNG files in `scratch_dir`.
class ExternalDetector final : public Detector {
public:
    ExternalDetector(std::string command, std::filesystem::path scratch_dir)
        : command_(std::move(command)), scratch_(std::move(scratch_dir)) {
        std::filesystem::create_directories(scratch_);
        ::signal(SIGPIPE, SIG_IGN);
        start();
    }

    ExternalDetector(const ExternalDetector&) = delete;
    ExternalDetector& operator=(const ExternalDetector&) = delete;

    ~ExternalDetector() override { stop(); }

    std::vector<Detection2D> detect(const DetectorInput& input, const std::optional<std::string>& class_filter) override {
        std::lock_guard lock(mutex_);
        if (!alive_) fail(ErrorKind::DetectorUnavailable, "external detector is not running");
        const std::int64_t id = next_id_++;
        const auto image_path = std::filesystem::absolute(scratch_ / ("request_" + std::to_string(getpid()) + "_" + std::to_string(id) + ".png"));
        io::write_png(image_path, input.image);
        const std::string line = protocol::encode_request({id, image_path.string(), class_filter}) + "\n";
        if (!write_all(line)) {
            alive_ = false;
            fail(ErrorKind::DetectorUnavailable, "external detector closed its input");
        }
        while (true) {
            if (auto it = pending_.find(id); it != pending_.end()) {
                auto boxes = std::move(it->second);
                pending_.erase(it);
                std::filesystem::remove(image_path);
                return boxes;
            }
            const auto reply = read_line();
            if (!reply) {
                alive_ = false;
                fail(ErrorKind::DetectorUnavailable, "external detector exited");
            }
            auto response = protocol::decode_response(*reply);
            pending_[response.id] = std::move(response.boxes);
        }
    }

    bool alive() const {
        std::lock_guard lock(mutex_);
        return alive_;
    }

private:
    void start() {
        int to_child[2], from_child[2];
        if (pipe(to_child) != 0 || pipe(from_child) != 0) fail(ErrorKind::DetectorUnavailable, "pipe() failed");
        pid_ = fork();
        if (pid_ < 0) fail(ErrorKind::DetectorUnavailable, "fork() failed");
        if (pid_ == 0) {
            dup2(to_child[0], STDIN_FILENO);
            dup2(from_child[1], STDOUT_FILENO);
            close(to_child[0]);
            close(to_child[1]);
            close(from_child[0]);
            close(from_child[1]);
            execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
            _exit(127);
        }
        close(to_child[0]);
        close(from_child[1]);
        write_fd_ = to_child[1];
        read_fd_ = from_child[0];
        fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
        fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
        alive_ = true;
    }

    void stop() {
        if (write_fd_ >= 0) close(write_fd_);
        if (read_fd_ >= 0) close(read_fd_);
        write_fd_ = read_fd_ = -1;
        if (pid_ > 0) {
            int status = 0;
            if (waitpid(pid_, &status, WNOHANG) == 0) {
                kill(pid_, SIGTERM);
                waitpid(pid_, &status, 0);
            }
        }
        pid_ = -1;
        alive_ = false;
    }

    bool write_all(const std::string& data) {
        std::size_t done = 0;
        while (done < data.size()) {
            const ssize_t n = ::write(write_fd_, data.data() + done, data.size() - done);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) return false;
            done += static_cast<std::size_t>(n);
        }
        return true;
    }

    std::optional<std::string> read_line() {
        while (true) {
            if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (line.empty()) continue;
                return line;
            }
            char chunk[4096];
            const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) return std::nullopt;
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    std::string command_;
    std::filesystem::path scratch_;
    mutable std::mutex mutex_;
    pid_t pid_ = -1;
    int write_fd_ = -1;
    int read_fd_ = -1;
    bool alive_ = false;
    std::int64_t next_id_ = 1;
    std::string buffer_;
    std::map<std::int64_t, std::vector<Detection2D>> pending_;
};

}  // namespace rcv
