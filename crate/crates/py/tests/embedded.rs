//! Runs the Python smoke script against the module registered in an
//! embedded interpreter, so no wheel build is needed.

use std::ffi::CString;
use std::path::Path;

use pyo3::prelude::*;
use pyo3::types::PyDict;

use orfit::orfit as orfit_module;

#[test]
fn smoke_script_passes() {
    pyo3::append_to_inittab!(orfit_module);
    Python::initialize();
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../python/smoke_test.py");
    let source = std::fs::read_to_string(&script).unwrap();
    Python::attach(|py| {
        let globals = PyDict::new(py);
        globals.set_item("__file__", script.to_str().unwrap()).unwrap();
        globals.set_item("__name__", "smoke").unwrap();
        py.run(&CString::new(source).unwrap(), Some(&globals), None).unwrap();
        py.run(c"main()", Some(&globals), None).unwrap();
    });
}
