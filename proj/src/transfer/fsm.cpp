#include "streamkit/transfer/fsm.hpp"

namespace streamkit::transfer {

std::string_view state_name(TransferState s) {
  switch (s) {
    case TransferState::created:
      return "CREATED";
    case TransferState::starting:
      return "STARTING";
    case TransferState::running:
      return "RUNNING";
    case TransferState::draining:
      return "DRAINING";
    case TransferState::completed:
      return "COMPLETED";
    case TransferState::failed:
      return "FAILED";
    case TransferState::canceled:
      return "CANCELED";
  }
  return "?";
}

std::string_view event_name(TransferEvent e) {
  switch (e) {
    case TransferEvent::relay_ready:
      return "relay_ready";
    case TransferEvent::job_queued:
      return "job_queued";
    case TransferEvent::job_active:
      return "job_active";
    case TransferEvent::job_completed:
      return "job_completed";
    case TransferEvent::job_failed:
      return "job_failed";
    case TransferEvent::user_cancel:
      return "user_cancel";
    case TransferEvent::drain_done:
      return "drain_done";
    case TransferEvent::start_failed:
      return "start_failed";
  }
  return "?";
}

std::optional<TransferState> state_from_name(std::string_view name) {
  for (TransferState s :
       {TransferState::created, TransferState::starting, TransferState::running,
        TransferState::draining, TransferState::completed, TransferState::failed,
        TransferState::canceled}) {
    if (state_name(s) == name) return s;
  }
  return std::nullopt;
}

bool is_terminal(TransferState s) {
  return s == TransferState::completed || s == TransferState::failed ||
         s == TransferState::canceled;
}

StepResult step(TransferState state, TransferEvent event) {
  switch (state) {
    case TransferState::created:
      if (event == TransferEvent::relay_ready) return {TransferState::starting, true};
      if (event == TransferEvent::start_failed) return {TransferState::failed, true};
      if (event == TransferEvent::user_cancel) return {TransferState::canceled, true};
      break;
    case TransferState::starting:
      if (event == TransferEvent::job_active) return {TransferState::running, true};
      if (event == TransferEvent::job_failed) return {TransferState::failed, true};
      if (event == TransferEvent::user_cancel) return {TransferState::canceled, true};
      break;
    case TransferState::running:
      if (event == TransferEvent::job_completed) return {TransferState::draining, true};
      if (event == TransferEvent::job_failed) return {TransferState::failed, true};
      if (event == TransferEvent::user_cancel) return {TransferState::canceled, true};
      break;
    case TransferState::draining:
      if (event == TransferEvent::drain_done) return {TransferState::completed, true};
      break;
    default:
      break;
  }
  return {state, false};
}

}  // namespace streamkit::transfer
