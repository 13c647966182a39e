#include "dudo/tensor/tape.hpp"

namespace dudo {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape::Tape() : previous_(g_active) { g_active = this; }

Tape::~Tape() { g_active = previous_; }

Tape* Tape::active() { return g_active; }

void Tape::record(std::function<void()> backward_fn) {
  if (consumed_) throw ContractError("cannot record onto a tape that already ran backward");
  entries_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (consumed_) throw ContractError("backward() already ran on this tape");
  if (!loss.requires_grad())
    throw ContractError("backward(): loss does not depend on any tensor requiring grad");
  consumed_ = true;
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) throw ContractError("backward() called with no active tape");
  tape->backward(loss);
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

}  // namespace dudo
