#include "webedit/cdp.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>

#include <cerrno>
#include <cstring>
#include <mutex>
#include <random>

extern char** environ;

namespace webedit::cdp {

namespace fs = std::filesystem;

namespace {

int dup_high(int fd) {
  // Keep our pipe ends away from 3 and 4 so the child's dup2 always copies.
  const int out = fcntl(fd, F_DUPFD_CLOEXEC, 10);
  if (out < 0) throw TransportError(fmt::format("fcntl: {}", std::strerror(errno)));
  close(fd);
  return out;
}

fs::path make_profile_dir() {
  std::random_device rd;
  for (int i = 0; i < 16; ++i) {
    fs::path p = fs::temp_directory_path() / fmt::format("webedit-profile-{:016x}", (std::uint64_t{rd()} << 32) | rd());
    std::error_code ec;
    if (fs::create_directory(p, ec)) return p;
  }
  throw TransportError("cannot create browser profile directory");
}

}  // namespace

Browser::Browser(const fs::path& executable, const std::vector<std::string>& extra_args) {
  // A browser that dies mid-write must surface as EPIPE, not kill the process.
  static std::once_flag ignore_sigpipe;
  std::call_once(ignore_sigpipe, [] { signal(SIGPIPE, SIG_IGN); });
  int in_pipe[2];   // parent -> browser
  int out_pipe[2];  // browser -> parent
  if (pipe2(in_pipe, O_CLOEXEC) != 0 || pipe2(out_pipe, O_CLOEXEC) != 0) {
    throw TransportError(fmt::format("pipe: {}", std::strerror(errno)));
  }
  for (int* fd : {&in_pipe[0], &in_pipe[1], &out_pipe[0], &out_pipe[1]}) *fd = dup_high(*fd);

  profile_dir_ = make_profile_dir();
  std::vector<std::string> args{executable.string(),
                                "--headless=shell",
                                "--remote-debugging-pipe",
                                "--no-sandbox",
                                "--no-zygote",
                                "--single-process",
                                "--disable-gpu",
                                "--hide-scrollbars",
                                "--mute-audio",
                                "--no-first-run",
                                "--disable-extensions",
                                "--disable-background-networking",
                                "--disable-background-timer-throttling",
                                "--disable-renderer-backgrounding",
                                "--disable-backgrounding-occluded-windows",
                                "--force-color-profile=srgb",
                                "--font-render-hinting=none",
                                "--user-data-dir=" + profile_dir_.string()};
  args.insert(args.end(), extra_args.begin(), extra_args.end());
  args.push_back("about:blank");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], 3);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], 4);
  posix_spawn_file_actions_addopen(&actions, 0, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(&actions, 1, "/dev/null", O_WRONLY, 0);
  posix_spawn_file_actions_addopen(&actions, 2, "/dev/null", O_WRONLY, 0);
  const int rc = posix_spawn(&pid_, executable.c_str(), &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(in_pipe[0]);
  close(out_pipe[1]);
  if (rc != 0) {
    close(in_pipe[1]);
    close(out_pipe[0]);
    std::error_code ec;
    fs::remove_all(profile_dir_, ec);
    throw TransportError(fmt::format("cannot launch {}: {}", executable.string(), std::strerror(rc)));
  }
  to_browser_ = in_pipe[1];
  from_browser_ = out_pipe[0];
  alive_ = true;
  reader_ = std::thread([this] { read_loop(); });
}

Browser::~Browser() {
  if (alive_) {
    try {
      call("Browser.close", json::object(), {}, std::chrono::seconds(5));
    } catch (const Error&) {
    }
  }
  if (to_browser_ >= 0) close(to_browser_);
  if (pid_ > 0) {
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    if (pid_ > 0) {
      kill(pid_, SIGKILL);
      waitpid(pid_, &status, 0);
    }
  }
  if (reader_.joinable()) reader_.join();
  if (from_browser_ >= 0) close(from_browser_);
  std::error_code ec;
  fs::remove_all(profile_dir_, ec);
}

void Browser::set_event_handler(EventHandler handler) {
  std::lock_guard lock(handler_mutex_);
  handler_ = std::move(handler);
}

std::int64_t Browser::send(const std::string& method, const json& params, const std::string& session_id,
                           std::shared_ptr<Pending> pending) {
  if (!alive_) throw TransportError("browser is not running");
  std::int64_t id;
  {
    std::lock_guard lock(pending_mutex_);
    id = next_id_++;
    if (pending) pending_[id] = std::move(pending);
  }
  json msg = {{"id", id}, {"method", method}, {"params", params}};
  if (!session_id.empty()) msg["sessionId"] = session_id;
  std::string wire = msg.dump();
  wire.push_back('\0');
  std::lock_guard lock(write_mutex_);
  std::size_t off = 0;
  while (off < wire.size()) {
    const ssize_t n = write(to_browser_, wire.data() + off, wire.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      alive_ = false;
      throw TransportError(fmt::format("write to browser failed: {}", std::strerror(errno)));
    }
    off += static_cast<std::size_t>(n);
  }
  return id;
}

void Browser::post(const std::string& method, const json& params, const std::string& session_id) {
  send(method, params, session_id, nullptr);
}

json Browser::call(const std::string& method, const json& params, const std::string& session_id,
                   std::chrono::milliseconds timeout) {
  auto pending = std::make_shared<Pending>();
  const std::int64_t id = send(method, params, session_id, pending);
  std::unique_lock lock(pending->mutex);
  if (!pending->cv.wait_for(lock, timeout, [&] { return pending->done; })) {
    std::lock_guard plock(pending_mutex_);
    pending_.erase(id);
    throw TransportError(fmt::format("{} timed out after {} ms", method, timeout.count()));
  }
  const json& reply = pending->message;
  if (reply.contains("transport_error")) throw TransportError(reply["transport_error"].get<std::string>());
  if (reply.contains("error")) {
    throw CommandError(fmt::format("{} failed: {}", method, reply["error"].value("message", reply["error"].dump())));
  }
  return reply.value("result", json::object());
}

void Browser::fail_pending(const std::string& why) {
  std::map<std::int64_t, std::shared_ptr<Pending>> drained;
  {
    std::lock_guard lock(pending_mutex_);
    drained.swap(pending_);
  }
  for (auto& [id, p] : drained) {
    std::lock_guard lock(p->mutex);
    p->message = {{"transport_error", why}};
    p->done = true;
    p->cv.notify_all();
  }
}

void Browser::read_loop() {
  std::string buffer;
  char chunk[65536];
  for (;;) {
    const ssize_t n = read(from_browser_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (std::size_t nul; (nul = buffer.find('\0', start)) != std::string::npos; start = nul + 1) {
      json msg = json::parse(buffer.begin() + static_cast<std::ptrdiff_t>(start),
                             buffer.begin() + static_cast<std::ptrdiff_t>(nul), nullptr, false);
      if (msg.is_discarded()) continue;
      if (msg.contains("id")) {
        std::shared_ptr<Pending> p;
        {
          std::lock_guard lock(pending_mutex_);
          auto it = pending_.find(msg["id"].get<std::int64_t>());
          if (it != pending_.end()) {
            p = it->second;
            pending_.erase(it);
          }
        }
        if (p) {
          std::lock_guard lock(p->mutex);
          p->message = std::move(msg);
          p->done = true;
          p->cv.notify_all();
        }
      } else {
        EventHandler handler;
        {
          std::lock_guard lock(handler_mutex_);
          handler = handler_;
        }
        if (handler) {
          try {
            handler(msg);
          } catch (const std::exception&) {
            // A failed reply to an event (e.g. the browser exiting mid-request) surfaces through call().
          }
        }
      }
    }
    buffer.erase(0, start);
  }
  alive_ = false;
  fail_pending("browser connection closed");
}

}  // namespace webedit::cdp
