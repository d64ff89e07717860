// Acceptance criteria runners. The fast set (gradient correctness, flow
// exactness, CLUB fidelity, InfoNCE closed forms, adapter identity, ICP
// recovery) runs on a fresh checkout in a couple of minutes; the end-to-end
// set lives in the acceptance test binary because it trains models.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xemb::accept {

struct KernelCase {
  std::string kernel;
  double rel_err;
};

// Seeded finite-difference checks cycling through the differentiable kernel
// set; >= `cases` checks in total.
std::vector<KernelCase> kernel_gradcheck_sweep(int cases, uint64_t seed,
                                               double eps = 1e-5);
double max_rel_err(const std::vector<KernelCase>& cases);

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  // set on criteria whose stated oracle values are unreachable; the failure
  // is expected and documented, never silenced
  bool documented_defect = false;
  std::string detail;
  double seconds = 0;
};

CriterionResult gradient_correctness();   // criterion 1
CriterionResult flow_exactness();         // criterion 2
CriterionResult club_fidelity();          // criterion 3
CriterionResult infonce_closed_forms();   // criterion 4
CriterionResult adapter_identity();       // criterion 5
CriterionResult icp_recovery();           // criterion 6

std::vector<CriterionResult> fast_criteria();

std::string summary_line(const CriterionResult& r);

// true when every criterion either passes or is a documented defect that
// failed exactly as recorded
bool suite_acceptable(const std::vector<CriterionResult>& rs);

}  // namespace xemb::accept
