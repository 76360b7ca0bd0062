"""corridorctl: mesoscopic freeway-arterial corridor simulation with a
Q-learning freeway control agent and traffic-responsive arterial signals."""

__version__ = "0.1.0"

from .network import (DemandProfile, FreewaySection, FundamentalDiagram,
                      Intersection, NetworkParams, NetworkTopology, RampSpec,
                      ScenarioConfig, TurnRatios, ValidationReport,
                      default_corridor, fd_sending_flow, load_scenario,
                      save_scenario, single_section_network,
                      validate_topology)
from .qlearn import (QTable, exploration_prob, has_converged, learning_rate,
                     load_table, q_update, save_table, select_action)
from .freeway_agent import (CoordinatedQlStrategy, FtcAction, FtcRawState,
                            RewardParams, compute_reward, desired_density,
                            discretize_state, enumerate_actions, lc_zone,
                            upstream_vsl_command, upstream_vsl_location)
from .signal_control import (CycleModel, DemandEstimate, FlowRatios,
                             SignalPlan, calibrate_cycle_model,
                             dominant_phase, estimate_demands,
                             estimate_turn_ratios, flow_ratios, green_splits,
                             modified_cycle, performance_index, webster_cycle)
from .mesosim import (ControlVector, CorridorSimulation, DemandSampler,
                      ProbeVehicle, bottleneck_capacity, metering_rate)
from .baselines import (FeedbackGains, FeedbackStrategy, NoControlStrategy,
                        SubAgentSpec, UncoordinatedQlStrategy,
                        build_uncoordinated_agents, feedback_step)
from .metrics import (RunMetrics, arterial_queue_metric, compute_run_metrics,
                      emission_rate, improvement_pct, mean_stops,
                      onramp_queue_metric, travel_time)
from .runner import RunResult, run_corridor
from .training import (OfflineSettings, OnlineSettings, train_offline,
                       train_online)
from .calibration import CalibrationSettings, calibrate_tsc
from .experiments import ExperimentPlan, evaluate, make_strategy
