#![no_main]

use libfuzzer_sys::fuzz_target;
use taskcal::prompting::{render, Example, FewShotContext, Mode, TemplateRegistry};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(registry) = TemplateRegistry::from_toml_str(text) else { return };
    let again = TemplateRegistry::from_toml_str(&registry.to_toml_string()).unwrap();
    assert_eq!(again.len(), registry.len());
    let example = Example::new("a premise", "a hypothesis", Some(0));
    let ctx = FewShotContext::zero_shot();
    for schema in registry.schemas() {
        for mode in Mode::ALL {
            let _ = render(schema, &example, mode, &ctx);
        }
    }
});
