#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

namespace doraemon {

/// Fixed-length window of the most recent (state, action) pairs, newest first.
/// Slots not yet filled read as zeros.
class History {
 public:
  History(std::size_t window, std::size_t state_dim) : window_(window), state_dim_(state_dim) {}

  std::size_t window() const noexcept { return window_; }
  std::size_t state_dim() const noexcept { return state_dim_; }
  std::size_t size() const noexcept { return entries_.size(); }

  void push(std::span<const double> state, double action) {
    if (window_ == 0) return;
    entries_.push_front({std::vector<double>(state.begin(), state.end()), action});
    if (entries_.size() > window_) entries_.pop_back();
  }

  /// Flattened window: window * (state_dim + 1) values, zero padded.
  void append_features(std::vector<double>& out) const {
    for (std::size_t i = 0; i < window_; ++i) {
      if (i < entries_.size()) {
        out.insert(out.end(), entries_[i].state.begin(), entries_[i].state.end());
        out.push_back(entries_[i].action);
      } else {
        out.insert(out.end(), state_dim_ + 1, 0.0);
      }
    }
  }

 private:
  struct Entry {
    std::vector<double> state;
    double action;
  };
  std::size_t window_, state_dim_;
  std::deque<Entry> entries_;
};

}  // namespace doraemon
