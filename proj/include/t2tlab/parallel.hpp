#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>

namespace t2t {

// One persistent helper thread; ranges are split in half with the caller
// running the first chunk. Every parallel site writes disjoint outputs with
// a fixed inner order, so results are bitwise identical to the sequential
// run no matter the timing and independent of the worker count.
class WorkerPool {
public:
  static WorkerPool& instance() {
    static WorkerPool pool;
    return pool;
  }

  int threads() const { return enabled_ ? 2 : 1; }

  // f(lo, hi) over [0, n), split once; small ranges stay on the caller
  template <class F>
  void run(long long n, long long min_split, F&& f) {
    if (!enabled_ || n < min_split) {
      f((long long)0, n);
      return;
    }
    const long long mid = n / 2;
    {
      std::unique_lock lock(mu_);
      task_ = [&f, mid, n] { f(mid, n); };
      has_task_ = true;
    }
    cv_.notify_one();
    f(0, mid);
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [&] { return !has_task_ && !running_; });
  }

private:
  WorkerPool() {
    const char* env = std::getenv("T2TLAB_THREADS");
    enabled_ = !(env && std::atoi(env) <= 1) && std::thread::hardware_concurrency() > 1;
    if (enabled_) worker_ = std::thread([this] { loop(); });
  }
  ~WorkerPool() {
    {
      std::unique_lock lock(mu_);
      stop_ = true;
    }
    cv_.notify_one();
    if (worker_.joinable()) worker_.join();
  }

  void loop() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return has_task_ || stop_; });
        if (stop_) return;
        task = std::move(task_);
        has_task_ = false;
        running_ = true;
      }
      task();
      {
        std::unique_lock lock(mu_);
        running_ = false;
      }
      done_cv_.notify_one();
    }
  }

  bool enabled_ = false;
  std::thread worker_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  std::function<void()> task_;
  bool has_task_ = false, running_ = false, stop_ = false;
};

inline int kernel_threads() { return WorkerPool::instance().threads(); }

}  // namespace t2t
