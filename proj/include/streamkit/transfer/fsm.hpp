#pragma once

#include <optional>
#include <string_view>

namespace streamkit::transfer {

enum class TransferState {
  created,
  starting,
  running,
  draining,
  completed,
  failed,
  canceled,
};

enum class TransferEvent {
  relay_ready,
  job_queued,
  job_active,
  job_completed,
  job_failed,
  user_cancel,
  drain_done,
  start_failed,
};

std::string_view state_name(TransferState s);
std::string_view event_name(TransferEvent e);
std::optional<TransferState> state_from_name(std::string_view name);
bool is_terminal(TransferState s);

struct StepResult {
  TransferState next;
  bool changed;  // false: the pair is rejected, state unchanged (and logged)
};

// The complete transition table. Pure and total: every (state, event) pair
// has a defined outcome.
//
//   created  --relay_ready-->   starting
//   created  --start_failed->   failed
//   created  --user_cancel-->   canceled
//   starting --job_active--->   running
//   starting --job_failed--->   failed
//   starting --user_cancel-->   canceled
//   running  --job_completed->  draining
//   running  --job_failed--->   failed
//   running  --user_cancel-->   canceled
//   draining --drain_done--->   completed
//
// job_queued is recorded but never causes a transition; anything else is
// rejected unchanged.
StepResult step(TransferState state, TransferEvent event);

}  // namespace streamkit::transfer
