use pyo3::prelude::*;

#[pymodule]
fn plgraph_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
