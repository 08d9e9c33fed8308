#include <cerrno>
#include <csignal>
#include <cstring>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "peng/error.hpp"
#include "peng/match_backend.hpp"

namespace peng {

namespace {

void write_all(int fd, const std::string& data) {
    std::size_t done = 0;
    while (done < data.size()) {
        const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(Errc::io, std::string("writing to match server: ") + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
    }
}

}  // namespace

SubprocessBackend::SubprocessBackend(std::vector<std::string> argv, std::map<std::string, std::string> paths)
    : argv_(std::move(argv)), paths_(std::move(paths)) {
    if (argv_.empty()) throw Error(Errc::invalid_argument, "subprocess backend needs a command");
    int in_pipe[2];
    int out_pipe[2];
    if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0) {
        throw Error(Errc::io, std::string("pipe: ") + std::strerror(errno));
    }
    std::vector<char*> args;
    for (auto& a : argv_) args.push_back(a.data());
    args.push_back(nullptr);

    pid_ = ::fork();
    if (pid_ < 0) throw Error(Errc::io, std::string("fork: ") + std::strerror(errno));
    if (pid_ == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        ::execvp(args[0], args.data());
        ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    std::signal(SIGPIPE, SIG_IGN);
}

SubprocessBackend::~SubprocessBackend() {
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    if (pid_ > 0) {
        int status = 0;
        ::waitpid(pid_, &status, 0);
    }
}

nlohmann::json SubprocessBackend::call(const nlohmann::json& request) const {
    const std::lock_guard lock(mutex_);
    write_all(to_child_, request.dump() + "\n");
    for (;;) {
        const auto nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            const std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            nlohmann::json response;
            try {
                response = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& ex) {
                throw Error(Errc::schema, std::string("match server sent invalid JSON: ") + ex.what());
            }
            if (response.contains("error")) {
                const auto& e = response["error"];
                const std::string code = e.value("code", std::string("io"));
                std::string message = e.value("message", std::string());
                if (message.starts_with(code + ": ")) message.erase(0, code.size() + 2);
                throw Error(errc_from_string(code), message, e.value("subject", std::string()));
            }
            return response;
        }
        char chunk[65536];
        const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) throw Error(Errc::io, "match server closed its output");
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

CorrespondenceSet SubprocessBackend::match_pair(const PairHandle& handle) const {
    const nlohmann::json request{
        {"op", "match"},
        {"pair", {{"reference", view_to_json(handle.reference)}, {"query", view_to_json(handle.query)}}},
        {"paths", paths_}};
    return correspondences_from_json(call(request));
}

CameraIntrinsics SubprocessBackend::intrinsics(const ViewKey& view) const {
    return intrinsics_from_json(call({{"op", "intrinsics"}, {"view", view_to_json(view)}}));
}

}  // namespace peng
