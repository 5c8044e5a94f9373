import json
import os
import tempfile

import numpy as np


def reject_unknown(data, allowed, where):
    """
    Raise ``ValueError`` when ``data`` carries keys outside ``allowed``.

    >>> reject_unknown({'a': 1}, ('a', 'b'), 'config')
    >>> reject_unknown({'c': 1}, ('a', 'b'), 'config')
    Traceback (most recent call last):
    ...
    ValueError: unknown field(s) in config: c
    """
    if not isinstance(data, dict):
        raise ValueError('{} must be a JSON object'.format(where))
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ValueError('unknown field(s) in {}: {}'.format(where, ', '.join(unknown)))


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError('{!r} is not JSON serializable'.format(obj))


def dumps(data):
    """
    Deterministic JSON text: sorted keys, shortest round-trip floats.

    >>> print(dumps({'b': np.float64(0.1), 'a': np.arange(2)}))
    {
      "a": [
        0,
        1
      ],
      "b": 0.1
    }
    """
    return json.dumps(data, sort_keys=True, indent=2, default=_default, allow_nan=False)


def atomic_write_text(file_name, text):
    """Write ``text`` to a temporary file next to ``file_name`` and rename it into place."""
    directory = os.path.dirname(os.path.abspath(file_name))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(file_name))
    try:
        with os.fdopen(fd, 'w', newline='') as fh:
            fh.write(text)
        os.replace(tmp, file_name)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def atomic_write_json(file_name, data):
    atomic_write_text(file_name, dumps(data) + '\n')


def atomic_write_frame(file_name, frame):
    """Write a pandas DataFrame as CSV, floats with 17 significant digits."""
    atomic_write_text(file_name, frame.to_csv(index=False, float_format='%.17g', lineterminator='\n'))
