#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>
#include <vector>

#include "cem/error.hpp"
#include "cem/model.hpp"
#include "cem/protocol.hpp"

extern char** environ;

namespace cem {
namespace {

using namespace std::chrono_literals;

// One bridge process connected through a socketpair bound to its stdin and
// stdout.
class Child {
 public:
  Child(const std::string& command, const std::map<std::string, std::string>& env) {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0)
      throw BackendError(std::string("socketpair failed: ") + std::strerror(errno));

    // Everything the child needs is prepared before fork.
    std::vector<std::string> env_store;
    for (char** e = environ; *e; ++e) {
      const std::string entry = *e;
      const auto eq = entry.find('=');
      if (eq != std::string::npos && env.count(entry.substr(0, eq))) continue;
      env_store.push_back(entry);
    }
    for (const auto& [k, v] : env) env_store.push_back(k + "=" + v);
    std::vector<char*> envp;
    for (auto& s : env_store) envp.push_back(s.data());
    envp.push_back(nullptr);
    std::string sh = "/bin/sh", dash_c = "-c", cmd = command;
    char* argv[] = {sh.data(), dash_c.data(), cmd.data(), nullptr};

    pid_ = ::fork();
    if (pid_ < 0) {
      ::close(fds[0]);
      ::close(fds[1]);
      throw BackendError(std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
      // Own process group so teardown also reaches anything the shell spawned.
      ::setpgid(0, 0);
      ::dup2(fds[1], STDIN_FILENO);
      ::dup2(fds[1], STDOUT_FILENO);
      ::execve("/bin/sh", argv, envp.data());
      ::_exit(127);
    }
    ::setpgid(pid_, pid_);  // also from the parent, so there is no window before exec
    ::close(fds[1]);
    fd_ = fds[0];
  }

  ~Child() { stop(); }
  Child(const Child&) = delete;
  Child& operator=(const Child&) = delete;

  int fd() const { return fd_; }

  // Immediate teardown for children that failed the handshake.
  void abort() {
    if (pid_ > 0) ::kill(-pid_, SIGKILL);
    stop();
  }

  void stop() {
    if (fd_ >= 0) {
      try {
        protocol::write_all(fd_, protocol::encode_frame(protocol::shutdown()));
      } catch (const BackendError&) {
      }
      ::shutdown(fd_, SHUT_WR);
      ::close(fd_);
      fd_ = -1;
    }
    if (pid_ > 0) {
      int status = 0;
      for (int i = 0; i < 500; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) == pid_) {
          pid_ = -1;
          return;
        }
        std::this_thread::sleep_for(10ms);
      }
      ::kill(-pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

 private:
  pid_t pid_ = -1;
  int fd_ = -1;
};

ModelInfo handshake(Child& child, std::chrono::milliseconds timeout, Backend backend) {
  protocol::write_all(child.fd(), protocol::encode_frame(protocol::hello()));
  const auto reply =
      protocol::read_frame(child.fd(), std::chrono::steady_clock::now() + timeout);
  if (!reply) throw BackendError("model process exited during handshake");
  const auto& h = reply->header;
  const std::string type = h["type"].get<std::string>();
  if (type == "error")
    throw BackendError("model refused handshake (protocol version mismatch?): " +
                       h.value("message", std::string("no message")));
  if (type != "model_info")
    throw BackendError("expected model_info during handshake, got '" + type + "'");
  if (h.contains("protocol") && h["protocol"] != protocol::kVersion)
    throw BackendError("protocol version mismatch: model speaks " + h["protocol"].dump());
  try {
    ModelInfo info;
    info.name = h.at("name").get<std::string>();
    info.task = parse_task(h.at("task").get<std::string>());
    info.scale = h.at("scale").get<int>();
    info.channels = h.at("channels").get<int>();
    info.concurrent_safe = h.at("concurrent").get<bool>();
    info.deterministic = h.value("deterministic", true);
    info.backend = backend;
    if (info.scale < 1 || (info.scale > 1 && info.task != Task::sr))
      throw BackendError("model_info declares an invalid scale");
    if (info.channels != 0 && info.channels != 1 && info.channels != 3)
      throw BackendError("model_info declares an invalid channel count");
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed model_info: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw BackendError(std::string("malformed model_info: ") + e.what());
  }
}

class SubprocessModel final : public Model {
 public:
  SubprocessModel(ModelInfo info, std::unique_ptr<Child> first, std::string command,
                  SubprocessOptions options)
      : Model(std::move(info)), command_(std::move(command)), options_(std::move(options)) {
    capacity_ = this->info().concurrent_safe ? std::max(1, options_.pool_size) : 1;
    spawned_ = 1;
    idle_.push_back(std::move(first));
  }

  ~SubprocessModel() override {
    std::lock_guard lock(mutex_);
    idle_.clear();
  }

  int peak() const { return peak_.load(); }

 protected:
  ImageBuffer run(const ImageBuffer& input) const override {
    std::unique_ptr<Child> child = acquire();
    const int now = in_flight_.fetch_add(1) + 1;
    int prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
    struct Release {
      const SubprocessModel* self;
      std::unique_ptr<Child>& child;
      ~Release() {
        self->in_flight_.fetch_sub(1);
        self->release(std::move(child));
      }
    } release{this, child};

    const std::int64_t id = next_id_.fetch_add(1);
    try {
      return round_trip(*child, id, input);
    } catch (const ChildDied&) {
      // Respawn and retry once; a second death is fatal.
      child.reset();
      child = respawn();
      try {
        return round_trip(*child, id, input);
      } catch (const ChildDied& e) {
        child.reset();
        throw BackendError(std::string("model process died twice: ") + e.what());
      }
    }
  }

 private:
  struct ChildDied : BackendError {
    using BackendError::BackendError;
  };

  ImageBuffer round_trip(Child& child, std::int64_t id, const ImageBuffer& input) const {
    const auto payload = protocol::encode_pixels(input);
    try {
      protocol::write_all(child.fd(),
                          protocol::encode_frame(protocol::infer_request(id, input), payload));
    } catch (const BackendError& e) {
      throw ChildDied(e.what());
    }
    std::optional<protocol::Frame> reply;
    try {
      reply = protocol::read_frame(child.fd());
    } catch (const BackendError& e) {
      throw ChildDied(e.what());
    }
    if (!reply) throw ChildDied("model process exited mid-stream");
    const auto& h = reply->header;
    const std::string type = h["type"].get<std::string>();
    if (type == "error")
      throw BackendError("model reported an error: " + h.value("message", std::string("?")));
    if (type != "result") throw BackendError("expected result frame, got '" + type + "'");
    if (!h.contains("id") || h["id"] != id)
      throw BackendError("result id does not match request " + std::to_string(id));
    return protocol::decode_pixels(h, reply->payload);
  }

  std::unique_ptr<Child> spawn_checked() const {
    auto child = std::make_unique<Child>(command_, options_.env);
    try {
      const ModelInfo fresh = handshake(*child, options_.handshake_timeout, info().backend);
      if (fresh.scale != info().scale || fresh.channels != info().channels)
        throw BackendError("respawned model declared a different shape contract");
    } catch (...) {
      child->abort();
      throw;
    }
    return child;
  }

  std::unique_ptr<Child> respawn() const { return spawn_checked(); }

  std::unique_ptr<Child> acquire() const {
    std::unique_lock lock(mutex_);
    for (;;) {
      if (!idle_.empty()) {
        auto c = std::move(idle_.front());
        idle_.pop_front();
        return c;
      }
      if (spawned_ < capacity_) {
        ++spawned_;
        lock.unlock();
        try {
          return spawn_checked();
        } catch (...) {
          lock.lock();
          --spawned_;
          cv_.notify_one();
          throw;
        }
      }
      cv_.wait(lock);
    }
  }

  void release(std::unique_ptr<Child> child) const {
    std::lock_guard lock(mutex_);
    if (child)
      idle_.push_back(std::move(child));
    else
      --spawned_;
    cv_.notify_one();
  }

  std::string command_;
  SubprocessOptions options_;
  int capacity_ = 1;
  mutable int spawned_ = 0;
  mutable std::mutex mutex_;
  mutable std::condition_variable cv_;
  mutable std::deque<std::unique_ptr<Child>> idle_;
  mutable std::atomic<std::int64_t> next_id_{1};
  mutable std::atomic<int> in_flight_{0};
  mutable std::atomic<int> peak_{0};
};

}  // namespace

ModelHandle spawn_subprocess_model(const std::string& command,
                                   const SubprocessOptions& options) {
  auto child = std::make_unique<Child>(command, options.env);
  ModelInfo info;
  try {
    info = handshake(*child, options.handshake_timeout, options.backend);
  } catch (...) {
    child->abort();
    throw;
  }
  return std::make_shared<SubprocessModel>(std::move(info), std::move(child), command,
                                           options);
}

int peak_in_flight(const Model& model) {
  if (const auto* sp = dynamic_cast<const SubprocessModel*>(&model)) return sp->peak();
  return 0;
}

}  // namespace cem
