#pragma once

#include <functional>
#include <vector>

#include "dudo/tensor/tensor.hpp"

namespace dudo {

// Records executed primitives for reverse-mode differentiation.
//
// Constructing a Tape makes it the active recorder for the current thread;
// destroying it restores whichever tape was active before. Primitives
// evaluated with no active tape produce tensors without gradient history.
// Entries are appended in execution order, so every entry's inputs were
// produced by earlier entries (or are leaves). backward() replays once.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward_fn);
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  // Seeds d(loss)/d(loss) = 1 and replays the recorded entries in reverse.
  // Gradients accumulate into existing leaf buffers.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> entries_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;
};

// backward() on the active tape.
void backward(const Tensor& loss);

// True when an active tape exists and any of the inputs carries gradients.
bool should_record(std::initializer_list<const Tensor*> inputs);

}  // namespace dudo
