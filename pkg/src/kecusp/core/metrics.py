from prometheus_client import Counter

# Prometheus metrics counters
solve_counter = Counter(
    "solves_total", "Total number of reduced Monge-Ampere solves", ["reduction"]
)
newton_iteration_counter = Counter(
    "newton_iterations_total",
    "Total number of Newton iterations across all solves",
    ["reduction"],
)
solve_failure_counter = Counter(
    "solve_failures_total",
    "Total number of solves that did not reach tolerance",
    ["reduction"],
)
positivity_retry_counter = Counter(
    "positivity_retries_total",
    "Total number of solves restarted from the barrier after losing positivity",
    ["reduction"],
)
continuation_step_counter = Counter(
    "continuation_steps_total",
    "Total number of s-continuation steps taken",
)
diagnostic_counter = Counter(
    "diagnostic_checks_total",
    "Total number of diagnostic checks evaluated",
    ["check", "outcome"],
)
run_counter = Counter(
    "runs_total",
    "Total number of CLI runs started",
    ["command"],
)
