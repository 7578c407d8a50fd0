import math

import numpy as np
import pandas as pd
from loguru import logger
from scipy.stats import spearmanr

from report.charts import (
    create_bias_chart,
    create_feasibility_chart,
    create_partial_curve_chart,
    create_sweep_chart,
)

from .certify import (
    REPORT_COLUMNS,
    continuous_reward_certificate_holds,
    discrete_reward_certificate_holds,
    estimate_discrepancy,
    exhaustive_partial_probability,
    oracle_verify_action_certificate,
    partial_sample_frequency,
    reward_bound_continuous,
)
from .certmath import (
    ActionKind,
    EnsembleConfig,
    adversarial_vote_bound,
    assumption_holds,
    dominating_benign_holds,
    feasibility_table,
    max_certifiable_C,
    max_certifiable_k,
    partial_sample_curve,
    partial_sample_prob_continuous,
    partial_sample_prob_discrete,
    sample_counts,
)
from .config import ExperimentConfig
from .detect import SCORE_COLUMNS, collect_action_bias, flag_and_recertify
from .ensemble import EnsembleDefender, MessageSet
from .envs import DemandShareEnv, GridFoodEnv, make_env, make_policy
from .envs.policies import MeanPayloadPolicy, PluralitySymbolPolicy
from .envs.rollout import EpisodeSeeds, min_clean_ablation_return_exhaustive, run_batch, run_episode
from .errors import ConfigError
from .report_printer import ReportPrinter
from .threat import (
    DEMAND_ATTACKS,
    AttackBudget,
    ChannelPolicy,
    DemandAttacker,
    GreedyAdaptiveAttacker,
    OffsetAttacker,
    RandomAttacker,
    simplex_candidates,
)

MAX_EXACT_PARTIAL_SAMPLES = 20
VIOLATION_COLUMNS = ["check", "instance", "channels", "payloads", "action", "benign_set", "detail"]
VERIFY_SUMMARY_COLUMNS = ["check", "instance", "cases", "violations", "passed"]

# small trajectory-level instances for the reward certificates
GRID_REWARD_CHECK = dict(width=5, height=5, n_agents=6, horizon=6, noise=1)
DEMAND_REWARD_CHECK = dict(n_agents=6, products=3, buyers=300, horizon=10)
REWARD_CHECK_ADVERSARIES = 1
REWARD_CHECK_ABLATION = 2


class ExperimentRunner:
    """Orchestrates certificate tables, rollouts, sweeps, oracle checks and detection."""

    def __init__(self, config: ExperimentConfig, trace: bool = False):
        self.config = config
        self.trace = trace
        self.seeds = EpisodeSeeds(config.seeds.env, config.seeds.attack, config.seeds.ensemble)
        self.printer = ReportPrinter(config.to_dict(), config.output.dir, config.output.format, trace)

    # ----------------------------------------------------------------------------------------------
    # components

    def make_env(self, n_agents: int | None = None):
        e = self.config.environment
        n = n_agents or self.config.ensemble.n_agents
        if e.name == "grid_food":
            return make_env(e.name, width=e.width, height=e.height, n_agents=n, horizon=e.horizon,
                            noise=e.noise, noise_kind=e.noise_kind)
        return make_env(e.name, n_agents=n, products=e.products, buyers=e.buyers, horizon=e.horizon)

    def make_policy(self, env, ablation_size: int):
        params = {"use_messages": self.config.ensemble.defender != "no_comm"}
        if isinstance(env, GridFoodEnv):
            params["aggregate"] = self.config.environment.aggregate
        return make_policy(env, ablation_size, **params)

    def make_defender(self, env, ensemble: EnsembleConfig) -> EnsembleDefender:
        return EnsembleDefender(self.make_policy(env, ensemble.ablation_size), ensemble, seed=self.seeds.ensemble)

    def make_attacker(self, env):
        a = self.config.attack
        if a.name == "none":
            return None
        if a.name == "random":
            return RandomAttacker(env.payload_space)
        if a.name in DEMAND_ATTACKS:
            return DemandAttacker(a.name, env.products)
        if a.name == "offset":
            offset = np.asarray(a.offset, dtype=float)
            if offset.shape != (env.payload_space.dim,):
                raise ConfigError(f"offset {a.offset} does not match payload dimension {env.payload_space.dim}")
            return OffsetAttacker(offset, env.payload_space)
        if a.candidates:
            candidates = [np.asarray(c, dtype=float) for c in a.candidates]
        elif isinstance(env, DemandShareEnv):
            candidates = simplex_candidates
        else:
            candidates = env.payload_space.grid(3)
        return GreedyAdaptiveAttacker(candidates, a.horizon, a.seed_aware)

    def make_budget(self, n_adversaries: int | None = None) -> AttackBudget:
        budget = self.config.attack_budget()
        if n_adversaries is None:
            return budget
        return AttackBudget(n_adversaries, budget.channel_policy, budget.assume_bounded)

    def _batch(self, env_factory, defender, attacker=None, budget=None, certify=True):
        run = self.config.run

        def job(i):
            return lambda: run_episode(env_factory(), defender, attacker, budget, self.seeds.offset(i),
                                       run.gamma, certify)

        return run_batch([job(i) for i in range(run.episodes)], run.workers)

    # ----------------------------------------------------------------------------------------------
    # certify

    def certify(self, n_agents: int, n_adversaries: int | None = None, k: int | None = None) -> dict:
        """Certificate calculator for (N, C, k) plus the three feasibility layouts."""
        if n_agents < 2:
            raise ConfigError(f"need N >= 2, got {n_agents}")
        summary = {"N": n_agents}
        c_vs_k = feasibility_table("c_vs_k", n_agents)
        n_values = range(3, max(31, n_agents + 1))
        self.printer.export_table("certify_c_vs_k", c_vs_k, ["N", "C", "k"])
        self.printer.export_table("certify_n_vs_c", feasibility_table("n_vs_c", n_values=n_values), ["k", "N", "C"])
        self.printer.export_table("certify_n_vs_k", feasibility_table("n_vs_k", n_values=n_values), ["C", "N", "k"])
        self.printer.export_figure("certify_c_vs_k", create_feasibility_chart(c_vs_k, "c_vs_k"))

        if n_adversaries is not None:
            summary["C"] = n_adversaries
            summary["assumption"] = assumption_holds(n_agents, n_adversaries)
            k_max = max_certifiable_k(n_agents, n_adversaries)
            summary["max_certifiable_k"] = k_max
            if not summary["assumption"]:
                summary["notice"] = f"bounded-adversary assumption violated: 2C={2 * n_adversaries} >= N-1={n_agents - 1}"
            if k is None:
                k = k_max
        if k is not None:
            summary["k"] = k
            summary["max_certifiable_C"] = max_certifiable_C(n_agents, k)
            if n_adversaries is not None:
                n1, n2 = sample_counts(n_agents, n_adversaries, k)
                summary.update(n1=n1, n2=n2, u_adv=adversarial_vote_bound(n_agents, n_adversaries, k))
                summary["condition2"] = dominating_benign_holds(n_agents, n_adversaries, k)
                if summary["condition2"]:
                    curve = partial_sample_curve(n_agents, n_adversaries, k)
                    self.printer.export_table("certify_p_d", curve, ["D", "p_D"])
                    self.printer.export_figure("certify_p_d", create_partial_curve_chart(curve))

        self.printer.export_table("certify_summary", [{"key": key, "value": value} for key, value in summary.items()])
        self.printer.print_summary(f"Certificate for N={n_agents}", summary)
        if n_adversaries is None:
            self.printer.print_table("Largest k per C", c_vs_k)
        self.printer.print_written()
        return summary

    # ----------------------------------------------------------------------------------------------
    # simulate

    def simulate(self) -> dict:
        self.config.validate()
        ensemble = self.config.ensemble_config()
        defender = self.make_defender(self.make_env(), ensemble)
        attacker = self.make_attacker(self.make_env())
        budget = self.make_budget() if attacker is not None else None
        if self.trace:
            logger.info("simulating {} episodes of {} (N={} C={} k={} D={})", self.config.run.episodes,
                        self.config.environment.name, ensemble.n_agents, ensemble.n_adversaries,
                        ensemble.ablation_size, ensemble.sample_size)
        trajectories = self._batch(self.make_env, defender, attacker, budget)

        steps, certificates, episodes = [], [], []
        for i, trajectory in enumerate(trajectories):
            steps.append(trajectory.to_frame().assign(episode=i))
            certificates.extend({"episode": i, **r.row()} for r in trajectory.reports)
            episodes.append({
                "episode": i,
                "return": trajectory.total_reward,
                "discounted_return": trajectory.discounted_return(),
                "steps": len(trajectory),
                "certified_fraction": trajectory.certified_fraction,
            })
        step_frame = pd.concat(steps, ignore_index=True) if steps else pd.DataFrame()
        if not step_frame.empty:
            step_frame = step_frame[["episode", "step", "action", "reward", "tamper_mask", "verdict"]]
        episode_frame = pd.DataFrame(episodes)

        self.printer.export_table("simulate_steps", step_frame)
        self.printer.export_table("simulate_certificates", certificates, ["episode", *REPORT_COLUMNS])
        self.printer.export_table("simulate_returns", episode_frame)

        summary = {
            "episodes": len(trajectories),
            "mean_return": float(episode_frame["return"].mean()),
            "mean_discounted_return": float(episode_frame["discounted_return"].mean()),
            "certified_fraction": float(episode_frame["certified_fraction"].mean()),
        }
        self.printer.print_seeds()
        self.printer.print_summary("Simulation", summary)
        self.printer.print_written()
        return summary

    # ----------------------------------------------------------------------------------------------
    # sweep

    def sweep_values(self, variable: str) -> list[int]:
        if self.config.sweep.values:
            return [int(v) for v in self.config.sweep.values]
        e = self.config.ensemble
        if variable == "k":
            k_max = max_certifiable_k(e.n_agents, e.n_adversaries) or 1
            return list(range(1, min(k_max + 2, e.n_agents - 1) + 1))
        if variable == "C":
            return [c for c in range(0, e.n_agents - 1) if assumption_holds(e.n_agents, c)]
        n1 = sample_counts(e.n_agents, e.n_adversaries, e.ablation_size)[0]
        values, d = [], n1
        while d >= 1:
            values.append(d)
            d //= 2
        if values[-1] != 1:
            values.append(1)
        return values

    def _swept_config(self, variable: str, value: int) -> EnsembleConfig:
        base = self.config.ensemble_config()
        if variable == "D":
            return base.with_changes(sample_size=value)
        changes = {"ablation_size": value} if variable == "k" else {"n_adversaries": value}
        swept = base.with_changes(sample_size=None, **changes)
        if self.config.ensemble.sample_size is not None and self.config.ensemble.sample_size < swept.n1:
            swept = swept.with_changes(sample_size=self.config.ensemble.sample_size)
        return swept

    def sweep(self, variable: str | None = None) -> tuple[pd.DataFrame, float]:
        """Clean and attacked returns for every swept value; Spearman trend of the clean return."""
        self.config.validate()
        variable = variable or self.config.sweep.variable
        if variable not in ("k", "D", "C"):
            raise ConfigError(f"unknown sweep variable {variable!r}")
        values = self.sweep_values(variable)
        rows = []
        for value in values:
            ensemble = self._swept_config(variable, value)
            env = self.make_env()
            defender = self.make_defender(env, ensemble)
            attacker = self.make_attacker(env)
            budget = self.make_budget(ensemble.n_adversaries if variable == "C" else None)
            clean = [t.discounted_return() for t in self._batch(self.make_env, defender, certify=False)]
            if attacker is None:
                attacked_runs = self._batch(self.make_env, defender)
            else:
                attacked_runs = self._batch(self.make_env, defender, attacker, budget)
            attacked = [t.discounted_return() for t in attacked_runs]
            rows.append({
                variable: value,
                "clean_mean": float(np.mean(clean)),
                "clean_std": float(np.std(clean)),
                "attacked_mean": float(np.mean(attacked)),
                "attacked_std": float(np.std(attacked)),
                "certified_fraction": float(np.mean([t.certified_fraction for t in attacked_runs])),
                "max_certifiable_k": max_certifiable_k(ensemble.n_agents, ensemble.n_adversaries),
            })
            if self.trace:
                logger.info("{}={}: clean {:.3f} attacked {:.3f}", variable, value,
                            rows[-1]["clean_mean"], rows[-1]["attacked_mean"])

        frame = pd.DataFrame(rows)
        clean_means = frame["clean_mean"].to_numpy()
        if len(frame) < 2 or np.ptp(clean_means) == 0:
            rho = math.nan
        else:
            rho, _ = spearmanr(frame[variable].to_numpy(), clean_means)
            rho = float(rho)

        self.printer.export_table(f"sweep_{variable}", frame)
        self.printer.export_figure(f"sweep_{variable}", create_sweep_chart(frame, variable))
        self.printer.print_seeds()
        self.printer.print_table(f"Sweep over {variable}", frame)
        self.printer.print_summary("Trend", {f"spearman(clean_return, {variable})": rho})
        self.printer.print_written()
        return frame, rho

    # ----------------------------------------------------------------------------------------------
    # verify

    def verify_instances(self) -> list[dict]:
        if self.config.verify.instances:
            return list(self.config.verify.instances)
        e = self.config.ensemble
        return [{
            "name": "default",
            "kind": "discrete",
            "n_agents": e.n_agents,
            "n_adversaries": e.n_adversaries,
            "ablation_size": e.ablation_size,
            "alphabet": ["a", "b", "c"],
            "benign": ["a"] * (e.n_agents - 2) + ["b"],
        }]

    @staticmethod
    def _instance(instance: dict):
        """(policy, config, benign messages, alphabet) for one oracle instance."""
        try:
            kind = ActionKind(instance.get("kind", "discrete"))
            n, c, k = int(instance["n_agents"]), int(instance["n_adversaries"]), int(instance["ablation_size"])
            alphabet = list(instance["alphabet"])
            benign = list(instance["benign"])
        except (KeyError, ValueError) as e:
            raise ConfigError(f"bad verify instance {instance.get('name', instance)}: {e}") from e
        if len(benign) != n - 1:
            raise ConfigError(f"instance {instance.get('name')} needs {n - 1} benign messages, got {len(benign)}")
        if kind == ActionKind.DISCRETE:
            policy = PluralitySymbolPolicy(alphabet=tuple(alphabet), ablation_size=k)
            payloads = benign
        else:
            alphabet = [np.atleast_1d(np.asarray(a, dtype=float)) for a in alphabet]
            payloads = [np.atleast_1d(np.asarray(b, dtype=float)) for b in benign]
            policy = MeanPayloadPolicy(ablation_size=k, dim=payloads[0].shape[0])
        sample_size = instance.get("sample_size")
        config = EnsembleConfig(n, c, k, sample_size, kind)
        return policy, config, MessageSet.from_payloads(payloads), alphabet

    def _verify_oracle(self, name, policy, config, benign, alphabet, violations, summary):
        # continuous instances record every escape, so a broken one shows its counterexample
        conditional = config.action_kind == ActionKind.DISCRETE
        found = oracle_verify_action_certificate(policy, None, benign, config.with_changes(sample_size=None),
                                                 alphabet, conditional, self.config.run.workers)
        for v in found:
            violations.append({"check": "oracle", "instance": name, **v.row(), "detail": ""})
        cases = math.comb(len(benign), config.n_adversaries) * len(alphabet) ** config.n_adversaries
        summary.append({"check": "oracle", "instance": name, "cases": cases,
                        "violations": len(found), "passed": not found})
        if found:
            logger.warning("instance {}: {} oracle violations, first {}", name, len(found), found[0].row())

    def _verify_partial(self, name, policy, config, benign, alphabet, violations, summary):
        n, c, k = config.n_agents, config.n_adversaries, config.ablation_size
        d = config.sample_size if not config.is_full else max(config.n1 // 2, 1)
        dominating = dominating_benign_holds(n, c, k)
        if config.n1 <= MAX_EXACT_PARTIAL_SAMPLES:
            cases = [(u, partial_sample_prob_discrete(n, c, k, d, u, exact=True)) for u in range(d + 1)]
            if dominating:
                cases.append((None, partial_sample_prob_continuous(n, c, k, d, exact=True)))
            mismatches = 0
            for u, closed in cases:
                exact = exhaustive_partial_probability(n, c, k, d, u)
                if exact != closed:
                    mismatches += 1
                    violations.append({"check": "partial_exact", "instance": name,
                                       "detail": f"u_max={u}: enumerated {exact} != closed form {closed}"})
            summary.append({"check": "partial_exact", "instance": name, "cases": len(cases),
                            "violations": mismatches, "passed": mismatches == 0})

        if config.action_kind == ActionKind.CONTINUOUS and not dominating:
            logger.warning("instance {}: no dominating benign sample, the D-ensemble carries no certificate", name)
            summary.append({"check": "partial_benign", "instance": name, "cases": 0,
                            "violations": 0, "passed": True})
            return

        attacked = benign.with_payloads({j: alphabet[-1] for j in range(c)})
        defender = EnsembleDefender(policy, config.with_changes(sample_size=d), seed=self.seeds.ensemble)
        freq = partial_sample_frequency(defender, None, attacked, self.config.verify.seeds,
                                        first_seed=self.seeds.ensemble, adversarial_channels=range(c))
        sigma3 = 3 * freq.standard_error
        results = [
            ("partial_event", freq.within(3.0),
             f"event rate {freq.event_rate:.5f} vs p_D {freq.probability:.5f} (3 sigma {sigma3:.5f})"),
            ("partial_benign", freq.benign_at_least(3.0),
             f"benign rate {freq.benign_rate:.5f} below p_D {freq.probability:.5f} (3 sigma {sigma3:.5f})"),
            ("partial_implication", freq.implication_failures == 0,
             f"{freq.implication_failures} seeds met the event and still left A_benign"),
        ]
        for check, ok, detail in results:
            summary.append({"check": check, "instance": name, "cases": freq.seeds,
                            "violations": int(not ok), "passed": ok})
            if not ok:
                violations.append({"check": check, "instance": name, "detail": detail})
        if self.trace:
            logger.info("{}: D={} u_max={} p_D {:.4f} event {:.4f} benign {:.4f}", name, d, freq.u_max,
                        freq.probability, freq.event_rate, freq.benign_rate)

    def _verify_discrete_reward(self, violations, summary):
        gamma = self.config.run.gamma
        env_factory = lambda: GridFoodEnv(**GRID_REWARD_CHECK)
        config = EnsembleConfig(GRID_REWARD_CHECK["n_agents"], REWARD_CHECK_ADVERSARIES, REWARD_CHECK_ABLATION)
        template = env_factory()
        defender = EnsembleDefender(make_policy(template, config.ablation_size), config)
        attacker = RandomAttacker(template.payload_space)
        budget = AttackBudget(REWARD_CHECK_ADVERSARIES, ChannelPolicy.PER_STEP)
        failures = 0
        for i in range(self.config.verify.reward_episodes):
            seeds = self.seeds.offset(i)
            env = env_factory()
            env.reset(seeds.env)
            bound = min_clean_ablation_return_exhaustive(env, defender.policy, gamma)
            trajectory = run_episode(env_factory(), defender, attacker, budget, seeds, gamma)
            value = trajectory.discounted_return()
            if not discrete_reward_certificate_holds(value, bound, trajectory.all_certified):
                failures += 1
                violations.append({"check": "reward_discrete", "instance": f"episode {i}",
                                   "detail": f"return {value:.6f} < bound {bound:.6f}"})
        summary.append({"check": "reward_discrete", "instance": "grid_food", "cases": self.config.verify.reward_episodes,
                        "violations": failures, "passed": failures == 0})

    def _verify_continuous_reward(self, violations, summary):
        gamma = self.config.run.gamma
        env_factory = lambda: DemandShareEnv(**DEMAND_REWARD_CHECK)
        config = EnsembleConfig(DEMAND_REWARD_CHECK["n_agents"], REWARD_CHECK_ADVERSARIES, REWARD_CHECK_ABLATION,
                                action_kind=ActionKind.CONTINUOUS)
        template = env_factory()
        defender = EnsembleDefender(make_policy(template, config.ablation_size), config)
        attacker = DemandAttacker("flip", template.products)
        budget = AttackBudget(REWARD_CHECK_ADVERSARIES, ChannelPolicy.PER_STEP)
        failures = 0
        for i in range(self.config.verify.reward_episodes):
            seeds = self.seeds.offset(i)
            clean = run_episode(env_factory(), defender, seeds=seeds, gamma=gamma, certify=False,
                                record_states=True)
            attacked = run_episode(env_factory(), defender, attacker, budget, seeds, gamma, record_states=True)
            if not attacked.all_certified:
                continue
            states = [r.state for r in clean.records] + [r.state for r in attacked.records]
            estimate = estimate_discrepancy(template, defender.policy, states, gamma)
            bound = reward_bound_continuous(estimate, clean.discounted_return())
            value = attacked.discounted_return()
            if not continuous_reward_certificate_holds(value, bound):
                failures += 1
                violations.append({"check": "reward_continuous", "instance": f"episode {i}",
                                   "detail": f"value {value:.6f} < bound {bound:.6f} (eps_R {estimate.eps_R:.6f})"})
        summary.append({"check": "reward_continuous", "instance": "demand_share",
                        "cases": self.config.verify.reward_episodes, "violations": failures, "passed": failures == 0})

    def verify(self, mode: str | None = None) -> int:
        """Oracle suite; returns 0 when every check passed and 1 otherwise."""
        mode = mode or self.config.verify.mode
        if mode not in ("full", "partial"):
            raise ConfigError(f"unknown verify mode {mode!r}")
        violations, summary = [], []
        for index, instance in enumerate(self.verify_instances()):
            name = instance.get("name", f"instance_{index}")
            policy, config, benign, alphabet = self._instance(instance)
            if self.trace:
                logger.info("verifying {} ({} N={} C={} k={})", name, config.action_kind.value,
                            config.n_agents, config.n_adversaries, config.ablation_size)
            if mode == "full":
                self._verify_oracle(name, policy, config, benign, alphabet, violations, summary)
            else:
                self._verify_partial(name, policy, config, benign, alphabet, violations, summary)
        if mode == "full" and self.config.verify.reward_episodes > 0:
            self._verify_discrete_reward(violations, summary)
            self._verify_continuous_reward(violations, summary)

        self.printer.export_table("verify_summary", summary, VERIFY_SUMMARY_COLUMNS)
        self.printer.export_table("verify_violations", violations, VIOLATION_COLUMNS)
        self.printer.print_seeds()
        self.printer.print_table("Verification", summary)
        if violations:
            self.printer.print_table("Violations", pd.DataFrame(violations, columns=VIOLATION_COLUMNS).head(10))
        self.printer.print_written()
        return 1 if violations else 0

    # ----------------------------------------------------------------------------------------------
    # detect

    def detect(self) -> dict:
        """Average action bias per channel, flag the top channels and re-certify."""
        self.config.validate()
        ensemble = self.config.ensemble_config()
        env = self.make_env()
        defender = self.make_defender(env, ensemble)
        policy_k1 = self.make_policy(env, 1)
        attacker = self.make_attacker(env)
        budget = None
        if attacker is not None:
            budget = self.make_budget().pinned(ensemble.n_channels, np.random.default_rng(self.seeds.attack))
        scores = collect_action_bias(self.make_env, defender, policy_k1, attacker, budget,
                                     self.config.detect.window, self.seeds)
        flagged, new_k = flag_and_recertify(scores, self.config.detect.flag, ensemble)
        old_k = max_certifiable_k(ensemble.n_agents, ensemble.n_adversaries)

        summary = {
            "attacked_channels": " ".join(map(str, budget.fixed_channels or ())) if budget else "",
            "flagged": " ".join(map(str, flagged)),
            "max_certifiable_k": old_k,
            "recertified_k": new_k,
            "k": f"{old_k} -> {new_k}",
        }
        rows = [s.row() for s in scores]
        self.printer.export_table("detect_scores", rows, SCORE_COLUMNS)
        self.printer.export_table("detect_summary", [{"key": k, "value": v} for k, v in summary.items()])
        self.printer.export_figure("detect_scores", create_bias_chart(rows, flagged))
        self.printer.print_seeds()
        self.printer.print_table("Action bias", rows)
        self.printer.print_summary("Detection", summary)
        self.printer.print_written()
        return {"scores": scores, "flagged": flagged, "max_certifiable_k": old_k, "recertified_k": new_k}
