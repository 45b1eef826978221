pub mod weak_form;
