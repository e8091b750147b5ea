// Copyright 2026-present the eclip project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <regex>

#include "eclip/errors.hpp"
#include "eclip/ragharness.hpp"
#include "httplib.h"

namespace eclip {
namespace {

using Clock = std::chrono::steady_clock;

struct Fd {
  int fd = -1;
  ~Fd() { reset(); }
  void reset() {
    if (fd >= 0) ::close(fd);
    fd = -1;
  }
};

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

}  // namespace

SubprocessClient::SubprocessClient(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
  if (command_.empty()) throw ConfigError("SubprocessClient: empty command");
  // Writes to an exited child then fail with EPIPE instead of raising SIGPIPE.
  ::signal(SIGPIPE, SIG_IGN);
}

std::string SubprocessClient::generate(const GenerationRequest& request) const {
  const std::string input = request.prompt.system + "\n\n" + request.prompt.user;
  int in_pipe[2], out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw TransportError(errno_text("pipe"));
  Fd in_r{in_pipe[0]}, in_w{in_pipe[1]};
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) throw TransportError(errno_text("pipe"));
  Fd out_r{out_pipe[0]}, out_w{out_pipe[1]};

  const pid_t pid = ::fork();
  if (pid < 0) throw TransportError(errno_text("fork"));
  if (pid == 0) {
    ::dup2(in_r.fd, STDIN_FILENO);
    ::dup2(out_w.fd, STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  in_r.reset();
  out_w.reset();
  ::fcntl(in_w.fd, F_SETFL, O_NONBLOCK);
  ::fcntl(out_r.fd, F_SETFL, O_NONBLOCK);

  const auto deadline = Clock::now() + timeout_;
  std::string output;
  std::size_t written = 0;
  bool timed_out = false, broken = false;
  if (input.empty()) in_w.reset();
  while (out_r.fd >= 0) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (left <= 0) {
      timed_out = true;
      break;
    }
    pollfd fds[2] = {{out_r.fd, POLLIN, 0}, {in_w.fd, POLLOUT, 0}};
    const int n = ::poll(fds, in_w.fd >= 0 ? 2 : 1, static_cast<int>(left));
    if (n < 0 && errno != EINTR) {
      broken = true;
      break;
    }
    if (in_w.fd >= 0 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t w = ::write(in_w.fd, input.data() + written, input.size() - written);
      if (w > 0) written += static_cast<std::size_t>(w);
      // A child that stops reading early is not an error; only its output counts.
      if (w < 0 && errno != EAGAIN) in_w.reset();
      if (written == input.size()) in_w.reset();
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      char buf[4096];
      const ssize_t r = ::read(out_r.fd, buf, sizeof buf);
      if (r > 0) output.append(buf, static_cast<std::size_t>(r));
      else if (r == 0 || errno != EAGAIN) out_r.reset();
    }
  }
  if (timed_out || broken) ::kill(pid, SIGKILL);
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (timed_out)
    throw TransportError("generator command timed out after " + std::to_string(timeout_.count()) + " ms: " + command_);
  if (broken) throw TransportError(errno_text("poll"));
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    throw TransportError("generator command failed (status " + std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1) +
                         "): " + command_);
  return output;
}

HttpClient::HttpClient(const std::string& url, std::chrono::milliseconds timeout) : timeout_(timeout) {
  static const std::regex re(R"(http://([^/:]+)(?::(\d+))?(/.*)?)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw ConfigError("HttpClient: expected http://host[:port][/path], got '" + url + "'");
  host_ = m[1];
  if (m[2].matched) port_ = std::stoi(m[2]);
  path_ = m[3].matched ? std::string(m[3]) : "/";
}

std::string HttpClient::describe() const { return "http://" + host_ + ":" + std::to_string(port_) + path_; }

std::string HttpClient::generate(const GenerationRequest& request) const {
  httplib::Client cli(host_, port_);
  const auto secs = timeout_.count() / 1000;
  const auto usecs = (timeout_.count() % 1000) * 1000;
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  const nlohmann::json body{{"system", request.prompt.system}, {"user", request.prompt.user}};
  const auto res = cli.Post(path_, body.dump(), "application/json");
  if (!res) throw TransportError(describe() + ": " + httplib::to_string(res.error()));
  if (res->status != 200) throw TransportError(describe() + ": HTTP " + std::to_string(res->status));
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception&) {
    throw TransportError(describe() + ": response is not JSON");
  }
  if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string())
    throw TransportError(describe() + ": response lacks a string 'text' field");
  return reply["text"].get<std::string>();
}

}  // namespace eclip
