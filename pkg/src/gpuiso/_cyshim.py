"""Stand-in for the ``cython`` module when Cython is not installed.

Only what ``_simcore`` touches: type names used in annotations and the
decorators, all of which become no-ops.
"""

compiled = False


class _Type:
    def __init__(self, name):
        self.name = name

    def __getitem__(self, item):
        return self

    def __call__(self, value):
        return value


double = _Type("double")
int = _Type("int")
bint = _Type("bint")
longlong = _Type("longlong")
Py_ssize_t = _Type("Py_ssize_t")


def _identity(fn):
    return fn


cfunc = ccall = inline = _identity
