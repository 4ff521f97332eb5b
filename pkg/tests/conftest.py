import pytest

from saeb import ScenarioConfig, default_graph, simulate
from saeb.mcmc import MCMCConfig
from saeb.panel import graph_from_neighbor_dict, standardize_covariates


@pytest.fixture(scope="session")
def portugal_graph():
    return default_graph()


@pytest.fixture(scope="session")
def small_graph():
    # 4-region path with one chord
    return graph_from_neighbor_dict({1: [2], 2: [1, 3, 4], 3: [2, 4], 4: [2, 3]})


@pytest.fixture(scope="session")
def binomial_panel():
    data, truth = simulate(ScenarioConfig(family="binomial", seed=101))
    return data, truth


@pytest.fixture(scope="session")
def small_binomial_panel(small_graph):
    config = ScenarioConfig(family="binomial", num_regions=4, num_quarters=6,
                            graph=small_graph, seed=7)
    data, truth = simulate(config)
    return data, truth


@pytest.fixture(scope="session")
def fast_config():
    return MCMCConfig(num_chains=2, iterations=3000, burn_in=1000,
                      thinning=2, base_seed=42)


@pytest.fixture(scope="session")
def small_binomial_fit(small_binomial_panel, small_graph, fast_config):
    from saeb import model_spec
    from saeb.mcmc import fit

    data, _ = small_binomial_panel
    work = standardize_covariates(data)
    spec = model_spec("binomial")
    return fit(work, spec, fast_config, small_graph), work, spec
