"""Contains the experiment runner: configuration, per-experiment chain drivers and artifact emission."""
import json
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import joblib
import numpy as np
import scipy
import tqdm as tqdm_package
from tqdm import tqdm

import diagnostics
import synth
import verify
from args import EXPERIMENTS, ExperimentArgParser
from kernels.analytic_toy import ToyParams, absolute_relaxation_time, gamma_ratio, toy_instance, toy_kernel_prob
from kernels.core import GaussianRandomWalk
from kernels.exchange import CountModel, averaged_exchange_step
from kernels.latent_rb import GaussianLatentModel, RbConfig, ais_mcmc_step, mhaar_rb_step
from kernels.mhaar import MhaarConfig, mhaar_step
from kernels.rjmcmc import (ChangepointPrior, ModelIndexProposal, TransDimensionalScheme, birth_death_scheme,
                            coin_weight, initial_state, model_index_histogram, rmj_step, within_model_sweep)
from kernels.ssm import LinearGaussianSsm, ZetaSchedule
from kernels.ssm_mhaar import mhaar_rb_ssm_step, mhaar_s_ssm_step, mwpg_step
from util import (ConfigError, CsvLog, NumericalContractError, RandomStreams, content_hash, file_hash,
                  parallel_map, set_inner_threads, write_json)


# Rows buffered before each append to a chain CSV.
FLUSH_EVERY = 1000


@dataclass
class ExperimentConfig:
    experiment: str
    kernel_args: dict = field(default_factory=dict)
    chain_length: int = 1000
    n_runs: int = 1
    seed: int = 0
    threads: int = 1
    burn_in: float = 0.25
    output_dir: str = ''

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError('Unknown experiment {}; expected one of {}.'.format(self.experiment, EXPERIMENTS))

    def render(self):
        """Canonical JSON with sorted keys."""
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def parse(cls, text):
        try:
            tree = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError('Config is not valid JSON: {}.'.format(e))
        unknown = sorted(set(tree) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError('Unknown config keys: {}.'.format(', '.join(unknown)))
        return cls(**tree)

    @classmethod
    def from_args(cls, args):
        return cls(experiment=args.command,
                   kernel_args=dict(args.kernel_args),
                   chain_length=args.chain_length,
                   n_runs=args.n_runs,
                   seed=args.seed,
                   threads=args.threads,
                   burn_in=args.burn_in,
                   output_dir=args.output_dir)

    def config_hash(self):
        return content_hash(self.render())


class Experiment(object):
    """One experiment: its model, initial state and kernel step.

    `step(state, rng)` returns (next_state, MhOutcome) and `row(state)` the
    values written to the chain CSV under `columns`.
    """
    name = None
    columns = ('theta',)

    def __init__(self, cfg):
        self.cfg = cfg
        self.k = cfg.kernel_args

    def initial_state(self, rng):
        raise NotImplementedError

    def step(self, state, rng):
        raise NotImplementedError

    def row(self, state):
        return [float(state[0])]

    def functional(self, samples):
        """Primary functional averaged across runs in ensemble.csv."""
        return np.asarray(samples, dtype=float)[:, 0]

    def ensemble_reference(self, steps):
        return None

    def summary(self, traces):
        return {}

    def write_tables(self, out_dir, traces):
        """Writes experiment-specific tables and returns their file names."""
        return []


class ToyExperiment(Experiment):
    name = 'toy'

    def __init__(self, cfg):
        super(ToyExperiment, self).__init__(cfg)
        self.params = ToyParams(self.k['a'], self.k['alpha'], self.k['n'])
        self.target, self.q, self.scheme = toy_instance(self.params)
        self.mhaar_cfg = MhaarConfig(self.params.n)

    def initial_state(self, rng):
        return -1.0

    def step(self, state, rng):
        out = mhaar_step(state, None, self.target, self.q, self.scheme, self.mhaar_cfg, rng)
        return out.next_state[0], out

    def row(self, state):
        return [int(state)]

    def functional(self, samples):
        return (np.asarray(samples)[:, 0] == 1).astype(float)

    def ensemble_reference(self, steps):
        # Started at -1: P(theta_t = 1) = (1 - lambda_2^t) / 2.
        lam = 1.0 - 2.0 * toy_kernel_prob(self.params)
        return 0.5 * (1.0 - lam ** steps)

    def summary(self, traces):
        return {'move_probability': toy_kernel_prob(self.params),
                'absolute_relaxation_time': absolute_relaxation_time(self.params),
                'gamma': gamma_ratio(self.params.a, self.params.n)}

    def write_tables(self, out_dir, traces):
        log = CsvLog(os.path.join(out_dir, 'gamma_n.csv'), ['a', 'n', 'gamma'])
        log.write(*[(a, n, gamma_ratio(a, n)) for a in self.k['a_values'] for n in self.k['n_values']])
        log = CsvLog(os.path.join(out_dir, 'gamma_a.csv'), ['a', 'gamma_1000'])
        log.write(*[(a, gamma_ratio(a, 1000)) for a in self.k['a_values']])
        return ['gamma_n.csv', 'gamma_a.csv']


class ExchangeExperiment(Experiment):
    name = 'exchange'

    def __init__(self, cfg):
        super(ExchangeExperiment, self).__init__(cfg)
        self.model = CountModel(self.k['d'], self.k['k'], prior_sd=self.k['prior_sd'])
        self.y = self.model.sample_exact(self.k['theta_true'], RandomStreams(self.k['data_seed']).generator())
        self.q = GaussianRandomWalk(self.k['proposal_sd'])

    def initial_state(self, rng):
        return (0.0, None)

    def step(self, state, rng):
        out = averaged_exchange_step(state[0], self.y, self.model, self.q, self.k['n'], rng)
        return out.next_state, out

    def summary(self, traces):
        grid = np.linspace(-8.0, 8.0, 4001) * self.k['prior_sd']
        p = self.model.exact_posterior(grid, self.y)
        mean = float(np.sum(grid * p))
        return {'data': list(self.y),
                'exact_posterior_mean': mean,
                'exact_posterior_sd': float(np.sqrt(np.sum((grid - mean) ** 2 * p)))}


class ChangepointExperiment(Experiment):
    name = 'changepoint'
    columns = ('m',)

    def __init__(self, cfg):
        super(ChangepointExperiment, self).__init__(cfg)
        length = self.k['length']
        if self.k['events']:
            self.events, manifest = synth.read_dataset(self.k['events'])
            length = manifest.get('params', {}).get('length', length)
            if self.events.size and self.events.max() > length:
                raise ConfigError('Events exceed the observation length {}; pass --length.'.format(length))
        else:
            rng = RandomStreams(self.k['data_seed']).generator()
            self.events = synth.changepoint_events(length, self.k['changepoints'], self.k['heights'], rng)
        self.prior = ChangepointPrior(length, self.k['lam'], self.k['m_max'],
                                      self.k['height_shape'], self.k['height_rate'])
        proposal = ModelIndexProposal(self.k['m_max'])
        self.scheme = TransDimensionalScheme(birth_death_scheme(length, self.prior.height),
                                             self.events, self.prior, proposal)
        self.omega = coin_weight(self.k['coin'])
        print('{} events on [0, {}].'.format(self.events.size, length), flush=True)

    def initial_state(self, rng):
        return initial_state(self.events, self.prior)

    def step(self, state, rng):
        out = rmj_step(state, self.events, self.scheme, self.k['n'], self.omega, rng)
        state, _ = within_model_sweep(out.next_state, self.events, self.prior, rng.child(2).generator(),
                                      height_sd=self.k['height_sd'])
        return state, out

    def row(self, state):
        return [state.m]

    def _histograms(self, traces):
        m_max = self.prior.m_max
        runs = []
        for trace in traces:
            ms = np.asarray(trace.samples)[:, 0]
            runs.append(ms[int(np.floor(self.cfg.burn_in * ms.size)):])
        pooled = model_index_histogram(np.concatenate(runs), m_max)
        return pooled, [model_index_histogram(ms, m_max) for ms in runs]

    def summary(self, traces):
        pooled, _ = self._histograms(traces)
        return {'posterior_mean_m': float(np.sum(np.arange(1, pooled.size + 1) * pooled))}

    def write_tables(self, out_dir, traces):
        pooled, runs = self._histograms(traces)
        write_json(os.path.join(out_dir, 'model_index.json'),
                   {'m': list(range(1, pooled.size + 1)),
                    'pooled': pooled.tolist(),
                    'runs': [h.tolist() for h in runs]})
        return ['model_index.json']


class LatentExperiment(Experiment):
    name = 'latent'

    def __init__(self, cfg):
        super(LatentExperiment, self).__init__(cfg)
        rng = RandomStreams(self.k['data_seed']).generator()
        self.model = GaussianLatentModel.simulate(self.k['theta_true'], self.k['T'], self.k['eps'], rng,
                                                  gamma_mid=self.k['gamma_mid'])
        self.q = GaussianRandomWalk(self.k['proposal_sd'])
        self.rb_cfg = RbConfig(self.k['refresh'])

    def initial_state(self, rng):
        return (0.0, self.model.sample_latent_posterior(0.0, rng.generator()))

    def step(self, state, rng):
        theta, z = state
        if self.k['kernel'] == 'rb':
            out = mhaar_rb_step(theta, z, self.model, self.q, self.k['m'], self.rb_cfg, rng)
        else:
            out = ais_mcmc_step(theta, z, self.model, self.q, self.k['m'], rng)
        return out.next_state, out

    def summary(self, traces):
        # theta | y is Normal: y_t ~ N(theta, 1 + eps^2) under a N(0, prior_sd^2) prior.
        var_y = 1.0 + self.model.eps ** 2
        precision = 1.0 / self.model.prior_sd ** 2 + self.model.T / var_y
        return {'exact_posterior_mean': float(np.sum(self.model.y) / var_y / precision),
                'exact_posterior_sd': float(np.sqrt(1.0 / precision))}


class SsmExperiment(Experiment):
    name = 'ssm'

    def __init__(self, cfg):
        super(SsmExperiment, self).__init__(cfg)
        settings = {key: self.k[key] for key in ('a', 'phi', 'sigma_z2', 'sigma_y2')}
        if self.k['observations']:
            y, _ = synth.read_dataset(self.k['observations'])
            if y.size == 0:
                raise ConfigError('Observations file {} holds no data.'.format(self.k['observations']))
            self.model = LinearGaussianSsm(y, **settings)
        else:
            rng = RandomStreams(self.k['data_seed']).generator()
            self.model = LinearGaussianSsm.simulate(self.k['theta_true'], self.k['T'], rng, **settings)
        self.q = GaussianRandomWalk(self.k['proposal_sd'])
        self.zetas = ZetaSchedule.from_name(self.k['zeta'])

    def initial_state(self, rng):
        return (0.0, self.model.sample_path(0.0, 1, rng.generator())[0])

    def step(self, state, rng):
        theta, z = state
        kernel, m = self.k['kernel'], self.k['m']
        if kernel == 'mwpg':
            out = mwpg_step(theta, z, self.model, self.q, m, rng)
        elif kernel == 'mhaar-rb':
            out = mhaar_rb_ssm_step(theta, z, self.model, self.q, m, self.zetas, self.k['refresh'], rng)
        else:
            out = mhaar_s_ssm_step(theta, z, self.model, self.q, m, self.k['n'], self.zetas,
                                   self.k['refresh'], rng)
        return out.next_state, out


EXPERIMENT_CLASSES = {'toy': ToyExperiment,
                      'exchange': ExchangeExperiment,
                      'changepoint': ChangepointExperiment,
                      'latent': LatentExperiment,
                      'ssm': SsmExperiment}


def run_chain(experiment, cfg, r, progress=True):
    """Runs chain r and writes chain_<r>.csv.

    Stream (seed, r, 0) draws the initial state and (seed, r, t) drives step t.
    """
    streams = RandomStreams(cfg.seed).child(r)
    state = experiment.initial_state(streams.child(0))
    log = CsvLog(os.path.join(cfg.output_dir, 'chain_{}.csv'.format(r)),
                 ['step'] + list(experiment.columns) + ['accepted', 'coin', 'log_ratio'])

    samples, outcomes, rows = [], [], []
    for t in tqdm(range(1, cfg.chain_length + 1), desc='{} run {}'.format(experiment.name, r), disable=not progress):
        state, outcome = experiment.step(state, streams.child(t))
        values = experiment.row(state)
        samples.append(values)
        outcomes.append(outcome)
        rows.append([t] + values + [outcome.accepted, outcome.coin, outcome.log_ratio_used])
        if len(rows) == FLUSH_EVERY:
            log.write(*rows)
            rows = []
    log.write(*rows)
    return diagnostics.ChainTrace.from_outcomes(samples, outcomes, meta={'run': r})


def series_summary(series, burn_in):
    """Mean, IAC, ESS and batch-means interval of one series; None where the chain is too short."""
    series = np.asarray(series, dtype=float)
    post = series[int(np.floor(burn_in * series.size)):]
    out = {'mean': float(post.mean()) if post.size else None,
           'iac': None, 'iac_window': None, 'iac_flag': None, 'ess': None, 'batch_means_iac': None}
    try:
        est = diagnostics.iac(series, burn_in)
        out.update(iac=est.value, iac_window=int(est.window), iac_flag=est.flag, ess=post.size / est.value)
    except ValueError:
        pass
    try:
        out['batch_means_iac'] = list(diagnostics.batch_means_ci(series, burn_in_fraction=burn_in))
    except ValueError:
        pass
    return out


def summarise(experiment, cfg, traces):
    runs = []
    for r, trace in enumerate(traces):
        samples = np.asarray(trace.samples)
        runs.append({'run': r,
                     'acceptance_rate': diagnostics.acceptance_rate(trace),
                     'coin_acceptance': {str(c): list(v) for c, v in diagnostics.coin_acceptance(trace).items()},
                     'columns': {name: series_summary(samples[:, j], cfg.burn_in)
                                 for j, name in enumerate(experiment.columns)}})
    summary = {'config_hash': cfg.config_hash(), 'runs': runs}
    summary.update(experiment.summary(traces))
    return summary


def write_ensemble(experiment, cfg, traces):
    mean, se = diagnostics.ensemble_average(traces, f=experiment.functional)
    steps = np.arange(1, mean.size + 1)
    reference = experiment.ensemble_reference(steps)
    header = ['step', 'mean', 'se'] + ([] if reference is None else ['reference'])
    log = CsvLog(os.path.join(cfg.output_dir, 'ensemble.csv'), header)
    if reference is None:
        log.write(*zip(steps, mean, se))
    else:
        log.write(*zip(steps, mean, se, reference))
    return 'ensemble.csv'


def versions():
    return {'python': platform.python_version(),
            'numpy': np.__version__,
            'scipy': scipy.__version__,
            'joblib': joblib.__version__,
            'tqdm': tqdm_package.__version__}


def run(cfg):
    """Executes cfg.n_runs chains of cfg.experiment and writes every artifact. Returns the exit status."""
    start = time.time()
    if not os.path.isdir(cfg.output_dir):
        os.makedirs(cfg.output_dir)
    try:
        experiment = EXPERIMENT_CLASSES[cfg.experiment](cfg)
    except (KeyError, ValueError) as e:
        raise ConfigError('Invalid {} experiment: {}'.format(cfg.experiment, e))

    with open(os.path.join(cfg.output_dir, 'config.json'), 'w') as f:
        f.write(cfg.render() + '\n')
    artifacts = ['config.json']

    # Runs share the pool when several execute at once; otherwise replicate maps get the threads.
    concurrent = cfg.n_runs > 1 and cfg.threads > 1
    set_inner_threads(1 if concurrent else cfg.threads)
    print('Running {} run(s) of {} steps of the {} experiment.'
          .format(cfg.n_runs, cfg.chain_length, cfg.experiment), flush=True)
    traces = parallel_map(lambda r: run_chain(experiment, cfg, r, progress=not concurrent),
                          range(cfg.n_runs), threads=cfg.threads if concurrent else 1)
    artifacts += ['chain_{}.csv'.format(r) for r in range(cfg.n_runs)]

    summary = summarise(experiment, cfg, traces)
    for run_summary in summary['runs']:
        print('Run {}. Acceptance rate: {:.4f}.'.format(run_summary['run'], run_summary['acceptance_rate']),
              flush=True)
    write_json(os.path.join(cfg.output_dir, 'summary.json'), summary)
    artifacts.append('summary.json')
    if cfg.n_runs >= 2:
        artifacts.append(write_ensemble(experiment, cfg, traces))
    artifacts += experiment.write_tables(cfg.output_dir, traces)

    manifest = {'config_hash': cfg.config_hash(),
                'versions': versions(),
                'wall_time_seconds': time.time() - start,
                'timestamp': time.strftime('%Y-%m-%dT%H:%M:%S'),
                'artifacts': {name: file_hash(os.path.join(cfg.output_dir, name)) for name in artifacts}}
    write_json(os.path.join(cfg.output_dir, 'manifest.json'), manifest)
    print('Wrote {} artifacts to {}.'.format(len(artifacts) + 1, cfg.output_dir), flush=True)
    return 0


def main(argv=None):
    """Entry point. Exit status 0 on success, 1 on a config error, 2 on a numerical-contract violation."""
    parser = ExperimentArgParser()
    try:
        args = parser.parse_args(argv)
        if args.command == 'synth':
            return synth.main(args)
        if args.command == 'verify':
            return verify.main(args)
        cfg = ExperimentConfig.from_args(args)
        print('Experiment config: {}'.format(cfg.render()), flush=True)
        return run(cfg)
    except SystemExit as e:
        # argparse exits with 2 on usage errors.
        return 0 if e.code in (0, None) else 1
    except ConfigError as e:
        print('Config error: {}'.format(e), file=sys.stderr, flush=True)
        return 1
    except NumericalContractError as e:
        print('Numerical contract violation: {}'.format(e), file=sys.stderr, flush=True)
        return 2


if __name__ == '__main__':
    sys.exit(main())
