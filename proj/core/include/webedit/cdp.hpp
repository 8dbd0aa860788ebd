#pragma once

#include <sys/types.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "webedit/error.hpp"
#include "webedit/jsonl.hpp"

namespace webedit::cdp {

/// The browser answered a command with an error object.
class CommandError : public Error {
 public:
  using Error::Error;
};

/// The browser went away or stopped answering.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// A headless browser child process driven over the remote-debugging pipe
/// (the child reads NUL-terminated JSON on fd 3 and writes on fd 4).
class Browser {
 public:
  using EventHandler = std::function<void(const json& message)>;

  Browser(const std::filesystem::path& executable, const std::vector<std::string>& extra_args);
  ~Browser();
  Browser(const Browser&) = delete;
  Browser& operator=(const Browser&) = delete;

  /// Sends a command and waits for its reply; returns the "result" object.
  json call(const std::string& method, const json& params = json::object(), const std::string& session_id = {},
            std::chrono::milliseconds timeout = std::chrono::seconds(30));

  /// Sends a command without waiting. Safe to use from the event handler.
  void post(const std::string& method, const json& params, const std::string& session_id = {});

  /// Called on the reader thread for every message that is not a reply.
  void set_event_handler(EventHandler handler);

  bool alive() const { return alive_.load(); }
  pid_t pid() const { return pid_; }

 private:
  struct Pending {
    std::mutex mutex;
    std::condition_variable cv;
    bool done = false;
    json message;
  };

  std::int64_t send(const std::string& method, const json& params, const std::string& session_id,
                    std::shared_ptr<Pending> pending);
  void read_loop();
  void fail_pending(const std::string& why);

  pid_t pid_ = -1;
  int to_browser_ = -1;
  int from_browser_ = -1;
  std::filesystem::path profile_dir_;
  std::atomic<bool> alive_{false};
  std::mutex write_mutex_;
  std::mutex pending_mutex_;
  std::map<std::int64_t, std::shared_ptr<Pending>> pending_;
  std::int64_t next_id_ = 1;
  std::mutex handler_mutex_;
  EventHandler handler_;
  std::thread reader_;
};

}  // namespace webedit::cdp
