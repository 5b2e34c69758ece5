from dataclasses import replace

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from codec import fit_codec
from conftest import adult_table_from, make_adult_frame
from errors import DataError
from schema_ingest import Table
from tstr import GradientDescentLogReg, known_rows, label_features, tstr


@pytest.fixture
def split():
    full = adult_table_from(make_adult_frame(1200, seed=21))
    frame = full.frame
    train = Table.from_frame(full.schema, frame.iloc[:800])
    test = Table.from_frame(full.schema, frame.iloc[800:])
    return train, test, fit_codec(full)


def test_label_block_excluded_from_features(split):
    train, _, spec = split
    features, labels = label_features(train, spec)
    assert features.shape == (800, spec.encoded_width - spec.block('income').width)
    assert set(np.unique(labels)) <= {0, 1}


def test_metrics_agree_with_confusion_matrix(split):
    train, test, spec = split
    result = tstr(train, test, seed=0, spec=spec)
    (tn, fp), (fn, tp) = result.confusion
    assert result.accuracy == pytest.approx((tn + tp) / len(test))
    if tp + fp:
        assert result.precision['>50K'] == pytest.approx(tp / (tp + fp))
    assert result.recall['>50K'] == pytest.approx(tp / (tp + fn))
    assert not result.degenerate


def test_matches_reference_logistic_regression(split):
    train, test, spec = split
    ours = tstr(train, test, seed=0, spec=spec)
    x_train, y_train = label_features(train, spec)
    x_test, y_test = label_features(test, spec)
    reference = LogisticRegression(max_iter=1000).fit(x_train, y_train)
    assert abs(ours.accuracy - reference.score(x_test, y_test)) <= 0.05


def test_single_class_training_is_degenerate(split):
    train, test, spec = split
    frame = train.frame.copy()
    frame['income'] = '<=50K'
    one_class = Table.from_frame(train.schema, frame)
    result = tstr(one_class, test, seed=0, spec=spec)
    assert result.degenerate
    assert result.recall['>50K'] == 0.0
    assert result.f1['>50K'] == 0.0
    assert result.notes


def test_classifier_is_seeded(split):
    train, _, spec = split
    x, y = label_features(train, spec)
    first = GradientDescentLogReg(seed=3).fit(x, y)
    second = GradientDescentLogReg(seed=3).fit(x, y)
    assert np.array_equal(first.weights, second.weights)


def test_unknown_test_categories_dropped(split):
    train, test, _ = split
    spec = fit_codec(train)
    frame = test.frame.copy()
    frame.loc[0, 'race'] = 'Other'
    race = test.schema['race']
    schema = test.schema.with_column(replace(race, vocabulary=race.vocabulary + ('Other',)))
    odd = Table.from_frame(schema, frame)
    assert len(known_rows(odd, spec)) == len(test) - 1
    result = tstr(train, odd, seed=0, spec=spec)
    assert result.n_test == len(test) - 1
    assert any(note.startswith('отброшено 1 ') for note in result.notes)


def test_empty_inputs_rejected(split):
    train, test, spec = split
    empty = Table.from_frame(train.schema, train.frame.iloc[:0])
    with pytest.raises(DataError):
        tstr(empty, test, seed=0, spec=spec)
