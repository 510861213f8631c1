#include <sstream>

#include "streamkit/jobs/jobs.hpp"

namespace streamkit::jobs {

std::string emit_slurm_script(const JobSpec& spec, const BackendConfig& backend,
                              const std::string& jobid) {
  std::ostringstream out;
  out << "#!/bin/bash\n";
  out << "#SBATCH --job-name=" << spec.name << "\n";
  out << "#SBATCH --nodes=" << spec.resources.node_count << "\n";
  out << "#SBATCH --ntasks-per-node=" << spec.resources.processes_per_node << "\n";
  out << "#SBATCH --cpus-per-task=" << spec.resources.cpu_cores_per_process << "\n";
  out << "#SBATCH --time=" << spec.resources.duration << "\n";
  if (!backend.queue_name.empty()) out << "#SBATCH --partition=" << backend.queue_name << "\n";
  if (!backend.project_name.empty()) out << "#SBATCH --account=" << backend.project_name << "\n";
  out << "\n";
  out << "psk reached " << jobid << " active 0\n";
  if (spec.directory) out << "cd '" << *spec.directory << "' || exit 125\n";
  out << spec.script << "\n";
  out << "rc=$?\n";
  out << "if [ $rc -eq 0 ]; then\n";
  out << "  psk reached " << jobid << " completed 0\n";
  out << "else\n";
  out << "  psk reached " << jobid << " failed $rc\n";
  out << "fi\n";
  out << "exit $rc\n";
  return out.str();
}

}  // namespace streamkit::jobs
