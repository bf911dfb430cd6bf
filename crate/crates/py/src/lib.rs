use pyo3::prelude::*;

#[pymodule]
fn beltrami_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
