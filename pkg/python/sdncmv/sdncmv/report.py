"""Plain-text reports rendered with Jinja2 templates."""

import math

import jinja2

from sdncmv import evalmetrics

_ENV = jinja2.Environment(trim_blocks=True,
                          lstrip_blocks=True,
                          keep_trailing_newline=True,
                          undefined=jinja2.StrictUndefined,
                          autoescape=False)


def _number(value, digits=4):
    if value is None or math.isnan(value):
        return '-'
    return f'{value:.{digits}f}'


def _percent(value):
    if value is None or math.isnan(value):
        return '-'
    return f'{100 * value:.1f}'


_ENV.filters['num'] = _number
_ENV.filters['pct'] = _percent

FIT_TEMPLATE = _ENV.from_string("""\
SDNCMV fit: B={{ model.B }}, tuning={{ model.tuning.value }}, seed={{ model.seed }}
regions p={{ model.p }}, candidate edges {{ n_edges }}{{ screened }}

differential edges at tau={{ network.tau }}: {{ network | length }}
{% for i, j, count in top %}
  ({{ i }}, {{ j }})  {{ count }}/{{ model.B }}
{% endfor %}
{% if more %}
  ... {{ more }} more in edges.tsv
{% endif %}
{% if model.test_ids %}

test subjects: {{ model.test_ids | length }}
{% if error is not none %}
misclassification rate: {{ error | pct }}%
{% endif %}
{% endif %}
""")

EVALUATION_TEMPLATE = _ENV.from_string("""\
differential network recovery at tau={{ tau }} (B={{ B }})
  true edges       {{ n_truth }}
  estimated edges  {{ n_estimated }}
  TPR  {{ rates.tpr | pct }}%
  TNR  {{ rates.tnr | pct }}%
  TDR  {{ rates.tdr | pct }}%
PR curve: {{ n_points }} points, average precision {{ ap | num }}
""")

# Block tags end their line, so each row is followed by an explicit blank.
REPLICATION_TEMPLATE = _ENV.from_string("""\
{{ table }}: {{ replications }} replications, scenario {{ scenario }}, \
p={{ p }}, q={{ q }}, B={{ B }}
{{ '%-22s' | format('metric') }}{% for method in methods %}{{ '%-18s' | format(method) }}{% endfor %}

{% for metric, cells in rows %}
{{ '%-22s' | format(metric) }}{% for cell in cells %}{{ '%-18s' | format(cell) }}{% endfor %}

{% endfor %}
{% if failed %}
subjects with failed features: {{ failed }}
{% endif %}
""")


def render_fit(model, network, error=None, top=20):
    """Summary of a fitted ensemble and its strongest differential edges.

    Args:
        model: the EnsembleModel.
        network: its DifferentialNetwork.
        error: test misclassification rate, if labels were known.
        top: number of edges listed.
    """
    screened = ''
    if model.active_set is not None:
        screened = f', screened to {len(model.active_set)}'
    return FIT_TEMPLATE.render(model=model,
                               network=network,
                               n_edges=model.theta_counts.size,
                               screened=screened,
                               top=list(network.edges[:top]),
                               more=max(0, len(network) - top),
                               error=error)


def render_evaluation(rates, tau, B, n_truth, n_estimated, points):  # pylint: disable=invalid-name
    return EVALUATION_TEMPLATE.render(rates=rates,
                                      tau=tau,
                                      B=B,
                                      n_truth=n_truth,
                                      n_estimated=n_estimated,
                                      n_points=len(points),
                                      ap=evalmetrics.average_precision(points))


def render_replication(settings, rows, failed=0):
    """Mean (SE) per metric and method; rates in percent.

    Args:
        settings: the replicate.ReplicationSettings of the run.
        rows: replicate.SummaryRow records.
        failed: number of subjects whose features failed across the run.
    """
    methods = []
    cells = {}
    for row in rows:
        if row.method not in methods:
            methods.append(row.method)
        scale = _number if row.metric == 'average_precision' else _percent
        cells.setdefault(row.metric, {})[row.method] = (
            f'{scale(row.mean)} ({scale(row.se)})')
    table = [(metric, [by_method.get(m, '') for m in methods])
             for metric, by_method in cells.items()]
    return REPLICATION_TEMPLATE.render(table=settings.table.value,
                                       replications=settings.replications,
                                       scenario=settings.scenario.scenario,
                                       p=settings.scenario.p,
                                       q=settings.scenario.q,
                                       B=settings.B,
                                       methods=methods,
                                       rows=table,
                                       failed=failed)
