import argparse
import copy
import json
import os

from util import ConfigError


EXPERIMENTS = ('toy', 'exchange', 'changepoint', 'latent', 'ssm')
COMMANDS = EXPERIMENTS + ('synth', 'verify')


def require(condition, message):
    if not condition:
        raise ConfigError(message)


def float_list(text):
    """Parses a comma-separated list of floats."""
    return [float(s) for s in text.split(',') if s]


def int_list(text):
    return [int(s) for s in text.split(',') if s]


class BaseArgParser(object):
    def __init__(self):
        self.parser = argparse.ArgumentParser()

    def namespace_to_dict(self, args):
        """Converts kernel_args and other nested Namespaces into plain dicts for the config tree."""
        args_dict = vars(copy.deepcopy(args))

        for arg in args_dict:
            obj = args_dict[arg]
            if isinstance(obj, argparse.Namespace):
                args_dict[arg] = self.namespace_to_dict(obj)

        return args_dict

    def fix_nested_namespaces(self, args):
        """Folds dotted dests such as kernel_args.n into one nested Namespace per group."""
        group_name_keys = []

        for key in args.__dict__:
            if '.' in key:
                group, name = key.split('.')
                group_name_keys.append((group, name, key))

        for group, name, key in group_name_keys:
            if group not in args:
                args.__dict__[group] = argparse.Namespace()

            args.__dict__[group].__dict__[name] = args.__dict__[key]
            del args.__dict__[key]

    def parse_args(self, argv=None):
        args = self.parser.parse_args(argv)
        self.fix_nested_namespaces(args)
        return args


def load_config_tree(path):
    """Reads a JSON key-value tree and flattens one level of nesting to dotted keys."""
    if not os.path.isfile(path):
        raise ConfigError('Config file {} does not exist.'.format(path))
    with open(path) as f:
        try:
            tree = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError('Config file {} is not valid JSON: {}.'.format(path, e))
    if not isinstance(tree, dict):
        raise ConfigError('Config file {} must hold a JSON object.'.format(path))

    flat = {}
    for key, value in tree.items():
        if isinstance(value, dict):
            for name, inner in value.items():
                flat['{}.{}'.format(key, name)] = inner
        else:
            flat[key] = value
    return flat


def add_common_arguments(parser, experiment):
    parser.add_argument('--config', type=str, default='',
            help='JSON key-value tree supplying defaults; explicit flags win.')
    parser.add_argument('--seed', type=int, default=0,
            help='Master seed of the random stream tree (u64).')
    parser.add_argument('--threads', type=int, default=1,
            help='Worker threads for runs and replicate maps.')
    parser.add_argument('--out', type=str, dest='output_dir', default=os.path.join('.', 'runs', experiment),
            help='Output folder for chains, summaries and the manifest.')
    parser.add_argument('--chain_length', type=int, default=1000,
            help='Number of kernel steps per run.')
    parser.add_argument('--n_runs', type=int, default=1,
            help='Number of independent runs.')
    parser.add_argument('--burn_in', type=float, default=0.25,
            help='Fraction of each chain discarded before computing diagnostics.')


def add_toy_arguments(parser):
    parser.add_argument('--a', type=float, dest='kernel_args.a', default=2.0,
            help='Odds parameter of the auxiliary draws.')
    parser.add_argument('--alpha', type=float, dest='kernel_args.alpha', default=0.5,
            help='Hold probability of the parameter proposal.')
    parser.add_argument('--n', type=int, dest='kernel_args.n', default=1,
            help='Number of averaged ratios N.')
    parser.add_argument('--a_values', type=float_list, dest='kernel_args.a_values', default=[2.0, 5.0, 10.0],
            help='Comma-separated values of a for the burn-in tables.')
    parser.add_argument('--n_values', type=int_list, dest='kernel_args.n_values',
            default=[1, 2, 4, 8, 16, 64, 1000],
            help='Comma-separated values of N for the burn-in tables.')


def add_exchange_arguments(parser):
    parser.add_argument('--n', type=int, dest='kernel_args.n', default=1,
            help='Number of auxiliary datasets averaged per step.')
    parser.add_argument('--d', type=int, dest='kernel_args.d', default=4,
            help='Number of data coordinates.')
    parser.add_argument('--k', type=int, dest='kernel_args.k', default=3,
            help='Number of values each coordinate takes.')
    parser.add_argument('--prior_sd', type=float, dest='kernel_args.prior_sd', default=1.0,
            help='Standard deviation of the Normal prior on theta.')
    parser.add_argument('--proposal_sd', type=float, dest='kernel_args.proposal_sd', default=0.5,
            help='Random-walk proposal standard deviation.')
    parser.add_argument('--theta_true', type=float, dest='kernel_args.theta_true', default=0.5,
            help='Parameter the observed dataset is drawn at.')
    parser.add_argument('--data_seed', type=int, dest='kernel_args.data_seed', default=0,
            help='Seed of the observed dataset.')


def add_changepoint_arguments(parser):
    parser.add_argument('--events', type=str, dest='kernel_args.events', default='',
            help='Events CSV; a synthetic dataset is generated when empty.')
    parser.add_argument('--n', type=int, dest='kernel_args.n', default=1,
            help='Number of averaged ratios N.')
    parser.add_argument('--coin', type=str, dest='kernel_args.coin', default='half',
            choices=['half', 'birth_averaged'],
            help='Coin weight: fair, or averaged births with inverted deaths.')
    parser.add_argument('--lam', type=float, dest='kernel_args.lam', default=3.0,
            help='Poisson mean of the number of interior changepoints.')
    parser.add_argument('--m_max', type=int, dest='kernel_args.m_max', default=30,
            help='Largest number of segments.')
    parser.add_argument('--height_shape', type=float, dest='kernel_args.height_shape', default=1.0,
            help='Shape of the Gamma prior on segment heights.')
    parser.add_argument('--height_rate', type=float, dest='kernel_args.height_rate', default=1.0,
            help='Rate of the Gamma prior on segment heights.')
    parser.add_argument('--height_sd', type=float, dest='kernel_args.height_sd', default=0.3,
            help='Log-scale random-walk step for heights.')
    parser.add_argument('--length', type=float, dest='kernel_args.length', default=100.0,
            help='Observation window length of the synthetic dataset.')
    parser.add_argument('--changepoints', type=float_list, dest='kernel_args.changepoints', default=[40.0],
            help='Interior changepoints of the synthetic dataset.')
    parser.add_argument('--heights', type=float_list, dest='kernel_args.heights', default=[1.0, 3.0],
            help='Segment heights of the synthetic dataset.')
    parser.add_argument('--data_seed', type=int, dest='kernel_args.data_seed', default=0,
            help='Seed of the synthetic dataset.')


def add_latent_arguments(parser):
    parser.add_argument('--kernel', type=str, dest='kernel_args.kernel', default='rb', choices=['rb', 'ais'],
            help='Rao-Blackwellised averaged-ratio kernel or single-path AIS-MCMC.')
    parser.add_argument('--m', type=int, dest='kernel_args.m', default=10,
            help='Number of particles per coordinate.')
    parser.add_argument('--gamma_mid', type=str, dest='kernel_args.gamma_mid', default='theta',
            choices=['theta', 'midpoint'],
            help='Intermediate factor: gamma at theta, or at the midpoint.')
    parser.add_argument('--refresh', type=str, dest='kernel_args.refresh', default='off',
            choices=['off', 'simple', 'general'],
            help='Second stage after a rejected parameter move.')
    parser.add_argument('--T', type=int, dest='kernel_args.T', default=50,
            help='Number of observations.')
    parser.add_argument('--eps', type=float, dest='kernel_args.eps', default=0.5,
            help='Observation noise standard deviation.')
    parser.add_argument('--theta_true', type=float, dest='kernel_args.theta_true', default=1.0,
            help='Parameter the observations are drawn at.')
    parser.add_argument('--proposal_sd', type=float, dest='kernel_args.proposal_sd', default=0.5,
            help='Random-walk proposal standard deviation.')
    parser.add_argument('--data_seed', type=int, dest='kernel_args.data_seed', default=0,
            help='Seed of the observations.')


def add_ssm_arguments(parser):
    parser.add_argument('--kernel', type=str, dest='kernel_args.kernel', default='mhaar-rb',
            choices=['mwpg', 'mhaar-rb', 'mhaar-s'],
            help='State-space kernel.')
    parser.add_argument('--m', type=int, dest='kernel_args.m', default=10,
            help='Number of particles.')
    parser.add_argument('--n', type=int, dest='kernel_args.n', default=10,
            help='Number of backward paths of the subsampled kernel.')
    parser.add_argument('--zeta', type=str, dest='kernel_args.zeta', default='theta', choices=['theta', 'midpoint'],
            help='Intermediate parameter schedule.')
    parser.add_argument('--refresh', action='store_true', dest='kernel_args.refresh', default=False,
            help='Refresh the latent path after a rejection (swap refresh for mhaar-s).')
    parser.add_argument('--observations', type=str, dest='kernel_args.observations', default='',
            help='Observations CSV; a linear-Gaussian dataset is generated when empty.')
    parser.add_argument('--T', type=int, dest='kernel_args.T', default=50,
            help='Number of generated observations.')
    parser.add_argument('--theta_true', type=float, dest='kernel_args.theta_true', default=1.0,
            help='Parameter the observations are drawn at.')
    parser.add_argument('--a', type=float, dest='kernel_args.a', default=1.0,
            help='Share of theta entering the observation mean.')
    parser.add_argument('--phi', type=float, dest='kernel_args.phi', default=0.95,
            help='Autoregression coefficient.')
    parser.add_argument('--sigma_z2', type=float, dest='kernel_args.sigma_z2', default=1.0,
            help='Stationary latent variance.')
    parser.add_argument('--sigma_y2', type=float, dest='kernel_args.sigma_y2', default=0.1,
            help='Observation noise variance.')
    parser.add_argument('--proposal_sd', type=float, dest='kernel_args.proposal_sd', default=0.3,
            help='Random-walk proposal standard deviation.')
    parser.add_argument('--data_seed', type=int, dest='kernel_args.data_seed', default=0,
            help='Seed of the generated observations.')


def add_synth_arguments(parser):
    parser.add_argument('--kind', type=str, required=True, choices=['changepoint', 'lgssm'],
            help='Dataset family.')
    parser.add_argument('--seed', type=int, default=0,
            help='Seed of the generated dataset.')
    parser.add_argument('--out', type=str, default='',
            help='Output CSV; defaults to events.csv or observations.csv.')

    # Change-point args.
    parser.add_argument('--length', type=float, dest='synth_args.length', default=100.0,
            help='Observation window length.')
    parser.add_argument('--changepoints', type=float_list, dest='synth_args.changepoints', default=[40.0],
            help='Comma-separated interior changepoints.')
    parser.add_argument('--heights', type=float_list, dest='synth_args.heights', default=[1.0, 3.0],
            help='Comma-separated segment heights.')

    # Linear-Gaussian args.
    parser.add_argument('--T', type=int, dest='synth_args.T', default=100,
            help='Number of observations.')
    parser.add_argument('--theta', type=float, dest='synth_args.theta', default=1.0,
            help='Parameter the observations are drawn at.')
    parser.add_argument('--a', type=float, dest='synth_args.a', default=1.0,
            help='Share of theta entering the observation mean.')
    parser.add_argument('--phi', type=float, dest='synth_args.phi', default=0.95,
            help='Autoregression coefficient.')
    parser.add_argument('--sigma_z2', type=float, dest='synth_args.sigma_z2', default=1.0,
            help='Stationary latent variance.')
    parser.add_argument('--sigma_y2', type=float, dest='synth_args.sigma_y2', default=0.1,
            help='Observation noise variance.')


def add_verify_arguments(parser):
    parser.add_argument('--fast', action='store_true', default=False,
            help='Skip the slow trend reproductions.')


def check_synth_args(args):
    s = args.synth_args
    if args.kind == 'changepoint':
        require(s.length > 0, 'Observation length must be positive.')
        require(len(s.heights) == len(s.changepoints) + 1,
            '{} changepoints need {} heights, got {}.'.format(len(s.changepoints), len(s.changepoints) + 1,
                                                               len(s.heights)))
        require(all(h > 0 for h in s.heights), 'Heights must be positive.')
        require(all(0 < c < s.length for c in s.changepoints), 'Changepoints must lie inside (0, {}).'.format(s.length))
        require(list(s.changepoints) == sorted(set(s.changepoints)), 'Changepoints must increase strictly.')
    else:
        require(s.T >= 0, 'Number of observations must be non-negative.')
        require(abs(s.phi) < 1, 'Autoregression coefficient must satisfy |phi| < 1.')
        require(s.sigma_z2 > 0 and s.sigma_y2 > 0, 'Noise variances must be positive.')


def check_kernel_args(experiment, k):
    """Validates one experiment's kernel arguments. Raises ConfigError on the first violated constraint."""
    if experiment == 'toy':
        require(k['a'] > 0, 'Toy odds parameter a must be positive.')
        require(0 <= k['alpha'] < 1, 'Hold probability must lie in [0, 1).')
        require(k['n'] >= 1, 'N must be at least 1.')
        require(all(a > 0 for a in k['a_values']) and all(n >= 1 for n in k['n_values']),
            'Table grids need positive a and N >= 1.')
    elif experiment == 'exchange':
        require(k['n'] >= 1, 'N must be at least 1.')
        require(k['d'] >= 1 and k['k'] >= 2, 'Need d >= 1 coordinates with k >= 2 values.')
        require(k['k'] ** k['d'] <= 10 ** 4, 'Support of size {} is too large to enumerate.'.format(k['k'] ** k['d']))
        require(k['prior_sd'] > 0 and k['proposal_sd'] > 0, 'Standard deviations must be positive.')
    elif experiment == 'changepoint':
        require(k['n'] >= 1, 'N must be at least 1.')
        require(k['m_max'] >= 2, 'Need at least two models.')
        require(k['lam'] > 0 and k['height_shape'] > 0 and k['height_rate'] > 0, 'Prior parameters must be positive.')
        require(k['height_sd'] > 0, 'Height step must be positive.')
        if not k['events']:
            require(len(k['heights']) == len(k['changepoints']) + 1,
                '{} changepoints need {} heights.'.format(len(k['changepoints']), len(k['changepoints']) + 1))
    elif experiment == 'latent':
        require(k['m'] >= 1, 'Need at least one particle.')
        require(k['T'] >= 1, 'Need at least one observation.')
        require(k['eps'] > 0 and k['proposal_sd'] > 0, 'Standard deviations must be positive.')
        if k['kernel'] == 'ais':
            require(k['gamma_mid'] == 'midpoint', 'AIS-MCMC needs --gamma_mid midpoint.')
            require(k['refresh'] == 'off', 'AIS-MCMC has no second stage.')
        if k['refresh'] == 'simple':
            require(k['gamma_mid'] == 'theta', 'Simple refreshment needs --gamma_mid theta.')
    elif experiment == 'ssm':
        require(k['m'] >= 1, 'Need at least one particle.')
        require(k['n'] >= 1, 'N must be at least 1.')
        require(k['proposal_sd'] > 0, 'Proposal standard deviation must be positive.')
        if not k['observations']:
            require(k['T'] >= 1, 'Need at least one observation.')
            require(abs(k['phi']) < 1, 'Autoregression coefficient must satisfy |phi| < 1.')
            require(k['sigma_z2'] > 0 and k['sigma_y2'] > 0, 'Noise variances must be positive.')
        if k['refresh'] and k['kernel'] in ('mhaar-rb', 'mhaar-s'):
            require(k['zeta'] == 'theta', 'Refreshment needs --zeta theta.')


class ExperimentArgParser(BaseArgParser):
    def __init__(self):
        super(ExperimentArgParser, self).__init__()
        subparsers = self.parser.add_subparsers(dest='command')
        subparsers.required = True
        self.subparsers = {}

        builders = {'toy': add_toy_arguments,
                    'exchange': add_exchange_arguments,
                    'changepoint': add_changepoint_arguments,
                    'latent': add_latent_arguments,
                    'ssm': add_ssm_arguments}
        for name in EXPERIMENTS:
            sub = subparsers.add_parser(name, help='Run the {} experiment.'.format(name))
            add_common_arguments(sub, name)
            builders[name](sub)
            self.subparsers[name] = sub

        self.subparsers['synth'] = subparsers.add_parser('synth', help='Generate a synthetic dataset.')
        add_synth_arguments(self.subparsers['synth'])
        self.subparsers['verify'] = subparsers.add_parser('verify', help='Run the invariant suite.')
        add_verify_arguments(self.subparsers['verify'])

    def parse_args(self, argv=None):
        args = self.parser.parse_args(argv)

        # Layer the config file under the explicit flags.
        if args.command in EXPERIMENTS and args.config:
            tree = load_config_tree(args.config)
            tree.pop('experiment', None)
            sub = self.subparsers[args.command]
            known = {action.dest for action in sub._actions}
            unknown = sorted(set(tree) - known)
            if unknown:
                raise ConfigError('Unknown config keys for {}: {}.'.format(args.command, ', '.join(unknown)))
            sub.set_defaults(**tree)
            args = self.parser.parse_args(argv)

        self.fix_nested_namespaces(args)
        if args.command == 'synth':
            check_synth_args(args)
            return args
        if args.command == 'verify':
            return args

        require(args.chain_length >= 1, 'Chain length must be at least 1.')
        require(args.n_runs >= 1, 'Number of runs must be at least 1.')
        require(args.threads >= 1, 'Number of threads must be at least 1.')
        require(0 <= args.burn_in < 1, 'Burn-in fraction must lie in [0, 1).')
        require(0 <= args.seed < 2 ** 64, 'Seed must be an unsigned 64-bit integer.')
        args.kernel_args = self.namespace_to_dict(args.kernel_args)
        check_kernel_args(args.command, args.kernel_args)
        return args


class SynthArgParser(BaseArgParser):
    def __init__(self):
        super(SynthArgParser, self).__init__()
        add_synth_arguments(self.parser)

    def parse_args(self, argv=None):
        args = super(SynthArgParser, self).parse_args(argv)
        check_synth_args(args)
        return args


class VerifyArgParser(BaseArgParser):
    def __init__(self):
        super(VerifyArgParser, self).__init__()
        add_verify_arguments(self.parser)
